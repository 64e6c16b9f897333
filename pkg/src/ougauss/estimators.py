"""Drift estimators computed from one discretised OU path.

* ``theta_tilde``: second-moment estimator, inverts the ergodic limit of
  (1/T) int X^2 dt.
* ``theta_hat``: least squares estimator with the divergence-type stochastic
  integral.  Since X has zero quadratic variation for beta > 1/2, the
  pathwise int X dX is X_T^2 / 2, and the divergence integral differs from
  the pathwise int X dG by its mean alpha_T(theta), which gives

      theta_hat = (alpha_T(theta_ref) - X_T^2 / 2) / int X^2 dt.

  ``theta_ref`` is the true theta in oracle mode.  Plug-in mode iterates
  ``theta_ref <- theta_hat`` starting from ``theta_tilde``.
* ``theta_hat_chaos``: the same quantity assembled from second-chaos
  integrals of f_T and g_T (verification route, needs the true theta).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import gamma as gamma_fn

from . import _accel
from .errors import DegeneratePathError, UnsupportedRegimeError
from .hilbert import GramMatrix, Grid, OuMoments, f_T, g_T, ou_moments
from .kernels import KernelSpec, ergodic_limit, sigma_beta2
from .simulate import chaos_i2, ou_coefficients

MIN_ENERGY = 1e-12
PLUGIN_TOL = 1e-8
PLUGIN_MAX_ITER = 50


def path_energy(x, grid: Grid) -> float:
    """Trapezoid approximation of int_0^T x_t^2 dt from node values."""
    x = np.asarray(x, dtype=float)
    return float(grid.weights @ (x * x))


def theta_from_moment(spec: KernelSpec, moment):
    """Invert theta -> ergodic_limit(spec, theta) at ``moment`` = (1/T) int X^2."""
    if spec.single_beta:
        b = spec.beta
        return (np.asarray(moment) / (spec.c_beta * gamma_fn(2 * b - 1))) ** (-1 / (2 * b))

    def solve(m):
        f = lambda lt: math.log(ergodic_limit(spec, math.exp(lt))) - math.log(m)
        return math.exp(brentq(f, -50.0, 50.0, xtol=1e-14))

    return np.vectorize(solve, otypes=[float])(moment)


def theta_tilde(x, grid: Grid, spec: KernelSpec) -> float:
    energy = path_energy(x, grid)
    if energy / grid.T < MIN_ENERGY:
        raise DegeneratePathError("path energy is zero; second-moment estimator undefined")
    return float(theta_from_moment(spec, energy / grid.T))


def theta_hat(x, gm: GramMatrix, theta_ref: float, moments: OuMoments | None = None) -> float:
    """Least squares estimator with alpha_T evaluated at ``theta_ref``."""
    x = np.asarray(x, dtype=float)
    energy = path_energy(x, gm.grid)
    if energy / gm.grid.T < MIN_ENERGY:
        raise DegeneratePathError("path energy is zero; least squares estimator undefined")
    if moments is None or moments.theta != theta_ref:
        moments = ou_moments(gm, theta_ref)
    return float((moments.alpha_T - 0.5 * x[-1] ** 2) / energy)


@dataclass(frozen=True)
class PluginResult:
    value: float
    iterations: int
    converged: bool


def theta_hat_plugin(x, gm: GramMatrix, spec: KernelSpec | None = None,
                     tol: float = PLUGIN_TOL, max_iter: int = PLUGIN_MAX_ITER) -> PluginResult:
    """Fixed point theta = theta_hat(x; alpha_T(theta)) started at theta_tilde."""
    spec = gm.spec if spec is None else spec
    ref = theta_tilde(x, gm.grid, spec)
    for it in range(1, max_iter + 1):
        new = theta_hat(x, gm, ref)
        if not new > 0:
            return PluginResult(new, it, False)
        if abs(new - ref) < tol:
            return PluginResult(new, it, True)
        ref = new
    return PluginResult(ref, max_iter, False)


def forward_sum_numerator(x, dg, gm: GramMatrix, theta: float) -> float:
    """Diagnostic: -int X dX via the forward Riemann sum instead of X_T^2 / 2.

    The two differ by half the discrete quadratic variation, which vanishes
    only like dt^(2 beta - 1).
    """
    x = np.asarray(x, dtype=float)
    fwd = float(x[:-1] @ np.diff(x))
    return ou_moments(gm, theta).alpha_T - fwd


def theta_hat_chaos(dg, gm: GramMatrix, theta: float, b: float | None = None):
    """theta - (I2(f_T) / 2T) / (I2(g_T) + b_T), for one path or a batch."""
    grid = gm.grid
    if b is None:
        b = ou_moments(gm, theta).b_T
    num = chaos_i2(f_T(grid, theta), dg, gm) / (2 * grid.T)
    den = chaos_i2(g_T(grid, theta), dg, gm) + b
    with np.errstate(divide="ignore", invalid="ignore"):
        out = theta - num / den
    out = np.where(den > 0, out, np.nan)
    return float(out) if np.ndim(out) == 0 else out


def studentize(theta_hat_value, theta_tilde_value, theta: float, spec: KernelSpec, T: float):
    """(stat_lse, stat_sme), both asymptotically standard normal."""
    if not spec.single_beta:
        raise UnsupportedRegimeError("studentized statistics need a single-beta kernel")
    b = spec.beta
    s2 = sigma_beta2(b)
    lse = np.sqrt(T / (theta * s2)) * (np.asarray(theta_hat_value) - theta)
    sme = np.sqrt(4 * b * b * T / (theta * s2)) * (np.asarray(theta_tilde_value) - theta)
    if np.ndim(lse) == 0 and np.ndim(sme) == 0:
        return float(lse), float(sme)
    return lse, sme


# -- records ---------------------------------------------------------------------------


RECORD_FIELDS = (
    "rep", "seed", "T", "n", "theta_true", "theta_tilde", "theta_hat_oracle",
    "theta_hat_plugin", "theta_hat_chaos", "stat_lse", "stat_sme", "int_x2", "flags",
)


@dataclass
class EstimateRecord:
    rep: int | None
    seed: int | None
    T: float
    n: int
    theta_true: float
    theta_tilde: float
    theta_hat_oracle: float
    theta_hat_plugin: float = math.nan
    theta_hat_chaos: float = math.nan
    stat_lse: float = math.nan
    stat_sme: float = math.nan
    int_x2: float = math.nan
    flags: list[str] = field(default_factory=list)

    def row(self) -> dict:
        d = asdict(self)
        d["flags"] = "|".join(self.flags)
        return d


def estimate_path(x, dg, gm: GramMatrix, theta: float, *, seed=None, rep=None,
                  modes=("oracle", "plugin", "chaos"), moments: OuMoments | None = None) -> EstimateRecord:
    """All estimators for one path; ``int_x2`` is (1/T) int X^2 dt."""
    grid, spec = gm.grid, gm.spec
    energy = path_energy(x, grid)
    if energy / grid.T < MIN_ENERGY:
        raise DegeneratePathError("path energy is zero")
    moments = ou_moments(gm, theta) if moments is None else moments
    rec = EstimateRecord(
        rep=rep, seed=seed, T=grid.T, n=grid.n, theta_true=theta,
        theta_tilde=theta_tilde(x, grid, spec),
        theta_hat_oracle=theta_hat(x, gm, theta, moments) if "oracle" in modes else math.nan,
        int_x2=energy / grid.T,
    )
    if "plugin" in modes:
        res = theta_hat_plugin(x, gm, spec)
        rec.theta_hat_plugin = res.value
        if not res.converged:
            rec.flags.append("plugin_nonconverged")
    if "chaos" in modes:
        rec.theta_hat_chaos = theta_hat_chaos(dg, gm, theta, moments.b_T)
        if not math.isfinite(rec.theta_hat_chaos):
            rec.flags.append("chaos_denominator")
    if spec.single_beta and 0.5 < spec.beta < 0.75:
        rec.stat_lse, rec.stat_sme = studentize(rec.theta_hat_oracle, rec.theta_tilde, theta, spec, grid.T)
    return rec


def estimate_batch(dg, gm: GramMatrix, theta: float, moments: OuMoments | None = None,
                   chaos: bool = False) -> dict:
    """Vectorised oracle LSE and second-moment estimator over rows of ``dg``.

    Rows with (1/T) int X^2 < 1e-12 are marked in ``keep`` and left as NaN.
    """
    grid, spec = gm.grid, gm.spec
    moments = ou_moments(gm, theta) if moments is None else moments
    decay, gain = ou_coefficients(grid, theta)
    energy, x_T = _accel.ou_summaries(dg, decay, gain, grid.weights)
    moment = energy / grid.T
    keep = moment >= MIN_ENERGY
    safe = np.where(keep, moment, np.nan)
    tilde = theta_from_moment(spec, safe)
    hat = (moments.alpha_T - 0.5 * x_T**2) / (safe * grid.T)
    out = {"int_x2": moment, "x_T": x_T, "theta_tilde": tilde, "theta_hat_oracle": hat, "keep": keep}
    if chaos:
        out["theta_hat_chaos"] = theta_hat_chaos(dg, gm, theta, moments.b_T)
    return out
