"""Exact-in-law sampling of the noise increments and the OU path.

Increments on a grid are a centered Gaussian vector with covariance
``gamma``; one Cholesky factor per (kernel, grid) is shared by all
replications.  Random numbers come from a Philox counter-based stream keyed
by the root seed, with the replication index in the counter, so replication
``r`` is reproducible on its own.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _accel
from .errors import NotPSDError
from .hilbert import GramMatrix, Grid

JITTER_FLOOR = 1e-14
JITTER_CAP = 1e-8


@dataclass(frozen=True, eq=False)
class CholeskyFactor:
    L: np.ndarray
    jitter: float
    label: str = ""

    @property
    def n(self) -> int:
        return self.L.shape[0]


def factor(gm: GramMatrix) -> CholeskyFactor:
    """Lower Cholesky factor of gamma, with escalating diagonal jitter on failure.

    Jitter starts at 1e-14 * trace/n and grows tenfold up to 1e-8 * trace/n.
    """
    G = gm.gamma
    n = G.shape[0]
    label = f"kernel {gm.spec} on grid T={gm.grid.T:g}, n={n}"
    scale = float(np.trace(G)) / n
    if scale == 0.0 and not np.any(G):
        return CholeskyFactor(np.zeros_like(G), 0.0, label)
    jitter = 0.0
    eye = np.eye(n)
    while True:
        try:
            L = scipy.linalg.cholesky(G + jitter * eye if jitter else G, lower=True, check_finite=False)
            if np.all(np.isfinite(L)):
                return CholeskyFactor(L, jitter, label)
        except np.linalg.LinAlgError:
            pass
        jitter = JITTER_FLOOR * scale if jitter == 0.0 else 10 * jitter
        if jitter > JITTER_CAP * scale * (1 + 1e-9):
            raise NotPSDError(f"Gram matrix is not positive semidefinite: {label}")


def generator(seed: int, rep_index: int, stream: int = 0) -> np.random.Generator:
    """Philox stream keyed by ``seed``; (rep_index, stream) select the counter block."""
    bitgen = np.random.Philox(key=int(seed) % 2**128, counter=[0, 0, int(rep_index), int(stream)])
    return np.random.Generator(bitgen)


def standard_normals(n: int, seed: int, reps, stream: int = 0) -> np.ndarray:
    """(len(reps), n) standard normals, row r drawn from ``generator(seed, r, stream)``."""
    reps = list(reps)
    z = np.empty((len(reps), n))
    for row, r in enumerate(reps):
        z[row] = generator(seed, r, stream).standard_normal(n)
    return z


def sample_increments(fac: CholeskyFactor, seed: int, rep_index: int, stream: int = 0) -> np.ndarray:
    z = generator(seed, rep_index, stream).standard_normal(fac.n)
    return fac.L @ z


def sample_increments_batch(fac: CholeskyFactor, seed: int, reps, stream: int = 0) -> np.ndarray:
    """Rows are replications; row r equals ``sample_increments(fac, seed, r, stream)``."""
    z = standard_normals(fac.n, seed, reps, stream)
    return z @ fac.L.T


@dataclass(frozen=True, eq=False)
class PathSample:
    dg: np.ndarray
    g: np.ndarray
    x: np.ndarray
    grid: Grid
    theta: float
    seed: int | None = None
    rep_index: int | None = None


def _check_step(grid: Grid, theta: float):
    if theta * grid.dt > 0.1:
        warnings.warn(
            f"theta*dt = {theta * grid.dt:.3g} exceeds 0.1; refine the grid",
            RuntimeWarning,
            stacklevel=3,
        )


def ou_coefficients(grid: Grid, theta: float) -> tuple[float, float]:
    """(decay, gain) of x[k+1] = decay x[k] + gain dg[k]."""
    return float(np.exp(-theta * grid.dt)), float(np.exp(-theta * grid.dt / 2))


def build_ou_path(dg, theta: float, grid: Grid, seed=None, rep_index=None) -> PathSample:
    """OU path with x_0 = 0 from noise increments (exact decay, midpoint kernel)."""
    dg = np.asarray(dg, dtype=float)
    if dg.shape != (grid.n,):
        raise ValueError(f"expected {grid.n} increments, got shape {dg.shape}")
    _check_step(grid, theta)
    decay, gain = ou_coefficients(grid, theta)
    x = _accel.ou_paths(dg[None, :], decay, gain)[0]
    g = np.concatenate(([0.0], np.cumsum(dg)))
    return PathSample(dg, g, x, grid, float(theta), seed, rep_index)


def simulate_path(gm: GramMatrix, theta: float, seed: int, rep_index: int = 0,
                  fac: CholeskyFactor | None = None) -> PathSample:
    fac = factor(gm) if fac is None else fac
    dg = sample_increments(fac, seed, rep_index)
    return build_ou_path(dg, theta, gm.grid, seed, rep_index)


def chaos_i2(phi, dg, gm: GramMatrix):
    """Discrete second chaos sum_{ij} phi_ij (dg_i dg_j - gamma_ij).

    ``dg`` may be one increment vector or a (reps, n) batch.
    """
    phi = np.asarray(phi, dtype=float)
    dg = np.asarray(dg, dtype=float)
    n = gm.n
    if phi.shape != (n, n) or dg.shape[-1] != n:
        raise ValueError(f"shape mismatch: phi {phi.shape}, dg {dg.shape}, grid n={n}")
    trace = float(np.sum(phi * gm.gamma))
    if dg.ndim == 1:
        return float(dg @ phi @ dg) - trace
    return np.einsum("ri,ri->r", dg @ phi, dg) - trace
