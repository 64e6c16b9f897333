"""Discrete calculus on the Hilbert space of the noise.

Functions on [0, T] are represented by their values on the cells of a uniform
grid.  For cell indicators the inner product is exact: it is the double
increment of R over the two cells, so the singular diagonal of the mixed
partial never has to be integrated pointwise.  Smooth integrands (the
exponential kernels f_T, h_T, g_T) are sampled at cell midpoints.

Bivariate grid functions are plain ``(n, n)`` arrays; univariate ones are
length-``n`` vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import toeplitz

from . import _accel
from .errors import KernelDomainError
from .kernels import KernelSpec, cov


@dataclass(frozen=True)
class Grid:
    """Uniform partition of [0, T] into ``n`` cells."""

    T: float
    n: int

    def __post_init__(self):
        if not (self.T > 0 and np.isfinite(self.T)):
            raise KernelDomainError(f"horizon must be positive, got {self.T}")
        if int(self.n) != self.n or self.n < 1:
            raise KernelDomainError(f"cell count must be a positive integer, got {self.n}")

    @classmethod
    def from_step(cls, T: float, dt: float) -> "Grid":
        n = int(round(T / dt))
        if n < 1 or abs(n * dt - T) > 1e-9 * T:
            raise KernelDomainError(f"horizon {T} is not a multiple of the step {dt}")
        return cls(float(T), n)

    @property
    def dt(self) -> float:
        return self.T / self.n

    @cached_property
    def nodes(self) -> np.ndarray:
        return self.T * np.arange(self.n + 1) / self.n

    @cached_property
    def midpoints(self) -> np.ndarray:
        return self.T * (np.arange(self.n) + 0.5) / self.n

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid weights on the nodes."""
        w = np.full(self.n + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w


@dataclass(frozen=True, eq=False)
class GramMatrix:
    """Inner products of cell indicators.

    ``gamma``    exact inner products (double increments of R);
    ``gamma1``   the same for the singular part C_beta |t-s|^(2 beta-2) alone;
    ``cell_weights``  int_cell u^(beta-1) du, so that the remainder majorant is
    ``C'_beta * outer(cell_weights, cell_weights)``.
    """

    spec: KernelSpec
    grid: Grid
    gamma: np.ndarray
    gamma1: np.ndarray
    cell_weights: np.ndarray

    @property
    def n(self) -> int:
        return self.grid.n

    @cached_property
    def gamma2_majorant(self) -> np.ndarray:
        return self.spec.c_beta_prime * np.outer(self.cell_weights, self.cell_weights)


def _singular_autocov(spec: KernelSpec, grid: Grid) -> np.ndarray:
    b = spec.beta
    k = np.arange(grid.n, dtype=float)
    scale = spec.c_beta / (2 * b * (2 * b - 1)) * grid.dt ** (2 * b)
    return scale * (np.abs(k + 1) ** (2 * b) + np.abs(k - 1) ** (2 * b) - 2 * k ** (2 * b))


def gram(spec: KernelSpec, grid: Grid) -> GramMatrix:
    t = grid.nodes
    R = cov(spec, t[:, None], t[None, :])
    R = np.atleast_2d(R)
    gamma = R[1:, 1:] - R[1:, :-1] - R[:-1, 1:] + R[:-1, :-1]
    del R
    gamma = 0.5 * (gamma + gamma.T)
    gamma1 = toeplitz(_singular_autocov(spec, grid))
    b = spec.beta
    cell_weights = np.diff(t**b) / b
    return GramMatrix(spec, grid, gamma, gamma1, cell_weights)


def _check_vec(f, gm):
    f = np.asarray(f, dtype=float)
    if f.shape != (gm.n,):
        raise ValueError(f"expected a length-{gm.n} vector, got shape {f.shape}")
    return f


def _check_mat(phi, gm):
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (gm.n, gm.n):
        raise ValueError(f"expected a {gm.n}x{gm.n} grid function, got shape {phi.shape}")
    return phi


def inner_h(f, g, gm: GramMatrix) -> float:
    f, g = _check_vec(f, gm), _check_vec(g, gm)
    return float(f @ gm.gamma @ g)


def _tensor_inner(phi, psi, G):
    # sum_{i,j,k,l} phi[i,k] G[i,j] psi[j,l] G[k,l]
    return float(np.sum(phi * (G @ psi @ G)))


def inner_h2tensor(phi, psi, gm: GramMatrix) -> float:
    """Inner product on the tensor square, O(n^3)."""
    return _tensor_inner(_check_mat(phi, gm), _check_mat(psi, gm), gm.gamma)


def contract1(phi, psi, gm: GramMatrix) -> np.ndarray:
    """First contraction: (phi (x)_1 psi)[a, b] = sum_{j,l} phi[a,j] gamma[j,l] psi[b,l]."""
    phi, psi = _check_mat(phi, gm), _check_mat(psi, gm)
    return phi @ gm.gamma @ psi.T


def norm_h_sq(phi, gm: GramMatrix) -> float:
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 1:
        return inner_h(phi, phi, gm)
    return inner_h2tensor(phi, phi, gm)


def norm_h1_sq(phi, gm: GramMatrix) -> float:
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 1:
        phi = _check_vec(phi, gm)
        return float(phi @ gm.gamma1 @ phi)
    return _tensor_inner(_check_mat(phi, gm), phi, gm.gamma1)


def norm_h2_sq(phi, gm: GramMatrix) -> float:
    """Remainder majorant norm, evaluated on |phi| with the rank-one majorant."""
    cp = gm.spec.c_beta_prime
    if cp == 0:
        return 0.0
    w = gm.cell_weights
    a = np.abs(np.asarray(phi, dtype=float))
    if a.ndim == 1:
        a = _check_vec(a, gm)
        return float(cp * (w @ a) ** 2)
    a = _check_mat(a, gm)
    return float((cp * (w @ a @ w)) ** 2)


def k_operator(phi, gm: GramMatrix) -> np.ndarray:
    """(K phi)(r) = int_0^T |phi(r, u)| u^(beta-1) du with exact cell weights."""
    return np.abs(_check_mat(phi, gm)) @ gm.cell_weights


# -- the exponential kernels ---------------------------------------------------------


def exp_decay(grid: Grid, theta: float, t: float | None = None) -> np.ndarray:
    """Midpoint samples of exp(-theta (t - u)) 1_[0,t](u); t defaults to T."""
    t = grid.T if t is None else t
    m = grid.midpoints
    return np.where(m < t, np.exp(-theta * (t - m)), 0.0)


def f_T(grid: Grid, theta: float) -> np.ndarray:
    m = grid.midpoints
    return np.exp(-theta * np.abs(m[:, None] - m[None, :]))


def h_T(grid: Grid, theta: float) -> np.ndarray:
    e = exp_decay(grid, theta)
    return np.outer(e, e)


def g_T(grid: Grid, theta: float) -> np.ndarray:
    return (f_T(grid, theta) - h_T(grid, theta)) / (2 * theta * grid.T)


def occupation_kernel(grid: Grid, theta: float) -> np.ndarray:
    """Second-chaos kernel of the discrete (1/T) int X^2 dt.

    With x_k = sum_{i<k} exp(-theta (t_k - m_i)) dg_i and trapezoid weights
    w_k this is (1/T) sum_k w_k u_k (x) u_k; it converges to g_T as dt -> 0.
    """
    n, dt, T = grid.n, grid.dt, grid.T
    w = grid.weights
    # tail[m] = sum_{k>=m} w_k exp(-2 theta (t_k - t_m)), m = 1..n
    tail = np.zeros(n + 2)
    e2 = np.exp(-2 * theta * dt)
    for k in range(n, 0, -1):
        tail[k] = w[k] + e2 * tail[k + 1]
    idx = np.arange(n)
    mx = np.maximum(idx[:, None], idx[None, :])
    m = grid.midpoints
    t_next = grid.nodes[mx + 1]
    expo = -theta * (2 * t_next - m[:, None] - m[None, :])
    return np.exp(expo) * tail[mx + 1] / T


# -- deterministic OU moments --------------------------------------------------------


@dataclass(frozen=True)
class OuMoments:
    """Second moments of the discrete OU path x_k driven by the exact increments.

    ``q[k] = E x_k^2`` and ``cross[k] = E[x_k dg_k]`` for the recursion
    x_{k+1} = e^{-theta dt} x_k + e^{-theta dt/2} dg_k.
    """

    grid: Grid
    theta: float
    q: np.ndarray
    cross: np.ndarray

    def at(self, m: int | None = None) -> tuple[float, float]:
        """(b_t, alpha_t) for the prefix horizon t = t_m (default: full grid)."""
        m = self.grid.n if m is None else int(m)
        if not 1 <= m <= self.grid.n:
            raise ValueError(f"prefix cell count must lie in [1, {self.grid.n}], got {m}")
        dt = self.grid.dt
        t = m * dt
        energy = dt * (self.q[1:m].sum() + 0.5 * self.q[m])
        b = energy / t
        alpha = 0.5 * self.q[m] + self.theta * energy
        return float(b), float(alpha)

    @property
    def b_T(self) -> float:
        return self.at()[0]

    @property
    def alpha_T(self) -> float:
        return self.at()[1]

    @property
    def forward_mean(self) -> float:
        """E of the forward Riemann sum sum_k x_k dg_k."""
        return float(self.cross.sum())


def ou_moments(gm: GramMatrix, theta: float) -> OuMoments:
    if theta <= 0:
        raise KernelDomainError("theta must be positive")
    dt = gm.grid.dt
    cross = _accel.lagged_cross_sums(gm.gamma, theta, dt)
    q = _accel.variance_recursion(np.diag(gm.gamma), cross, np.exp(-theta * dt), np.exp(-theta * dt / 2))
    return OuMoments(gm.grid, float(theta), q, cross)


def b_T(gm: GramMatrix, theta: float) -> float:
    """(1/T) int_0^T ||exp(-theta (t - .)) 1_[0,t]||^2 dt on the grid."""
    return ou_moments(gm, theta).b_T


def alpha_T(gm: GramMatrix, theta: float) -> float:
    """Expectation of the pathwise int_0^T X dG, i.e. E[X_T^2]/2 + theta E int X^2.

    Subtracting it from the pathwise integral leaves the divergence
    (Skorohod) integral; see ``estimators.theta_hat``.
    """
    return ou_moments(gm, theta).alpha_T


# -- refinement control --------------------------------------------------------------


@dataclass(frozen=True)
class Refined:
    value: float
    value_fine: float
    converged: bool

    @property
    def rel_change(self) -> float:
        return abs(self.value_fine - self.value) / max(abs(self.value_fine), 1e-300)


def refine(quantity, spec: KernelSpec, T: float, n: int, rtol: float = 1e-3) -> Refined:
    """Evaluate ``quantity(gram(spec, grid))`` at n and 2n cells and compare."""
    coarse = quantity(gram(spec, Grid(T, n)))
    fine = quantity(gram(spec, Grid(T, 2 * n)))
    rel = abs(fine - coarse) / max(abs(fine), 1e-300)
    return Refined(float(coarse), float(fine), bool(rel <= rtol))
