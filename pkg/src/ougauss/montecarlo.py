"""Seeded replication farms: CLT checks, Berry-Esseen rate fits, consistency runs."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from . import __version__
from .errors import ConfigError, DataError
from .estimators import estimate_batch, studentize, theta_hat_plugin, theta_from_moment
from .hilbert import Grid, gram, ou_moments
from .kernels import KernelSpec, constants
from .simulate import build_ou_path, factor, sample_increments_batch, standard_normals

MODES = ("oracle", "plugin", "chaos", "sme")
DEFAULT_BUDGET = 200_000
CHUNK = 500


def ks_distance(sample) -> float:
    """Kolmogorov distance between the empirical CDF of ``sample`` and N(0, 1)."""
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    if x.size == 0:
        raise DataError("empty sample")
    if not np.all(np.isfinite(x)):
        raise DataError("sample contains NaN or infinite values")
    n = x.size
    F = ndtr(x)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def ks_noise_floor(reps: int) -> float:
    """Mean Kolmogorov distance of an exact N(0,1) sample of size ``reps``."""
    return math.sqrt(math.pi / 2) * math.log(2) / math.sqrt(reps)


@dataclass
class McConfig:
    spec: KernelSpec
    theta: float = 1.0
    T_list: tuple[float, ...] = (40.0,)
    dt: float | None = 0.02
    reps: int = 5000
    seed: int = 0
    modes: tuple[str, ...] = ("oracle", "sme")
    budget: int = DEFAULT_BUDGET
    n: int | None = None

    def __post_init__(self):
        if (self.dt is None) == (self.n is None):
            raise ConfigError("give exactly one of dt (step) and n (cells per horizon)")
        self.T_list = tuple(float(t) for t in self.T_list)
        self.modes = tuple(self.modes)
        if self.reps < 1:
            raise ConfigError(f"reps must be positive, got {self.reps}")
        if self.theta <= 0:
            raise ConfigError("theta must be positive")
        if not self.T_list:
            raise ConfigError("empty horizon list")
        bad = set(self.modes) - set(MODES)
        if bad:
            raise ConfigError(f"unknown estimator modes {sorted(bad)}; choose from {MODES}")
        cost = self.reps * len(self.T_list)
        if cost > self.budget:
            raise ConfigError(
                f"run needs {cost} replication-horizons ({self.reps} reps x {len(self.T_list)} horizons, "
                f"largest grid n={self.grid(max(self.T_list)).n}); budget is {self.budget}"
            )

    def grid(self, T: float) -> Grid:
        if self.n is not None:
            return Grid(T, self.n)
        return Grid.from_step(T, self.dt)

    def echo(self) -> dict:
        return {
            "kernel": str(self.spec),
            "theta": self.theta,
            "T_list": list(self.T_list),
            "dt": self.dt,
            "n": self.n,
            "reps": self.reps,
            "seed": self.seed,
            "modes": list(self.modes),
            "budget": self.budget,
        }


def _stream(T: float) -> int:
    # horizon-specific counter block so adding horizons never reshuffles others
    return int(round(T * 1_000_000)) % 2**64


def _moments_row(v: np.ndarray) -> dict:
    n = v.size
    mean = float(v.mean())
    var = float(v.var(ddof=1)) if n > 1 else 0.0
    m4 = float(np.mean((v - mean) ** 4))
    return {
        "mean": mean,
        "var": var,
        "se_mean": math.sqrt(var / n),
        "se_var": math.sqrt(max(m4 - var * var, 0.0) / n),
    }


def simulate_horizon(cfg: McConfig, T: float, progress=None) -> dict:
    """Replicate all requested estimators at horizon ``T``; returns per-rep arrays."""
    spec, theta = cfg.spec, cfg.theta
    grid = cfg.grid(T)
    gm = gram(spec, grid)
    fac = factor(gm)
    mom = ou_moments(gm, theta)
    stream = _stream(T)
    parts: dict[str, list] = {}
    for start in range(0, cfg.reps, CHUNK):
        reps = range(start, min(start + CHUNK, cfg.reps))
        dg = sample_increments_batch(fac, cfg.seed, reps, stream)
        res = estimate_batch(dg, gm, theta, mom, chaos="chaos" in cfg.modes)
        if "plugin" in cfg.modes:
            vals = np.full(len(reps), np.nan)
            for row in range(len(reps)):
                if res["keep"][row]:
                    path = build_ou_path(dg[row], theta, grid)
                    vals[row] = theta_hat_plugin(path.x, gm, spec).value
            res["theta_hat_plugin"] = vals
        for k, v in res.items():
            parts.setdefault(k, []).append(v)
        if progress is not None:
            progress(T, reps.stop)
    out = {k: np.concatenate(v) for k, v in parts.items()}
    out["grid"] = grid
    out["b_T"] = mom.b_T
    out["alpha_T"] = mom.alpha_T
    return out


def _horizon_row(cfg: McConfig, T: float, sims: dict) -> dict:
    spec, theta = cfg.spec, cfg.theta
    keep = sims["keep"].copy()
    for key in ("theta_hat_oracle", "theta_tilde", "theta_hat_chaos", "theta_hat_plugin"):
        if key in sims:
            keep &= np.isfinite(sims[key])
    dropped = int(cfg.reps - keep.sum())
    lse, sme = studentize(sims["theta_hat_oracle"][keep], sims["theta_tilde"][keep], theta, spec, T)
    m_lse, m_sme = _moments_row(lse), _moments_row(sme)
    row = {
        "T": T,
        "n": sims["grid"].n,
        "ks_lse": ks_distance(lse),
        "ks_sme": ks_distance(sme),
        "mean_lse": m_lse["mean"],
        "var_lse": m_lse["var"],
        "mean_sme": m_sme["mean"],
        "var_sme": m_sme["var"],
        "se": {
            "mean_lse": m_lse["se_mean"],
            "var_lse": m_lse["se_var"],
            "mean_sme": m_sme["se_mean"],
            "var_sme": m_sme["se_var"],
        },
        "dropped": dropped,
        "b_T": sims["b_T"],
        "alpha_T": sims["alpha_T"],
    }
    for key, label in (("theta_hat_chaos", "chaos"), ("theta_hat_plugin", "plugin")):
        if key in sims:
            stat, _ = studentize(sims[key][keep], sims["theta_tilde"][keep], theta, spec, T)
            row[f"ks_{label}"] = ks_distance(stat)
            row[f"mean_{label}"] = float(stat.mean())
            row[f"var_{label}"] = float(stat.var(ddof=1))
    return row


def _fit(log_x, log_y):
    slope, intercept = np.polyfit(log_x, log_y, 1)
    resid = log_y - (slope * log_x + intercept)
    ss_tot = float(np.sum((log_y - log_y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2


@dataclass
class McReport:
    config: dict
    constants: dict
    rows: list[dict]
    fits: dict | None = None
    runtime_seconds: float | None = None
    extra: dict = field(default_factory=dict)

    def as_dict(self, reproducible: bool = False) -> dict:
        d = {
            "version": __version__,
            "seed": self.config.get("seed"),
            "config": self.config,
            "constants": self.constants,
            "rows": self.rows,
            "fits": self.fits,
            "runtime_seconds": None if reproducible else self.runtime_seconds,
        }
        d.update(self.extra)
        return d


def _constants_echo(cfg: McConfig) -> dict:
    c = constants(cfg.spec, cfg.theta)
    if c.sigma_beta2 is None:
        raise ConfigError(f"CLT runs need a single-beta kernel with beta in (1/2, 3/4); got beta={c.beta:g}")
    return {"sigma_beta2": c.sigma_beta2, "gamma": c.gamma, "a": c.a,
            "sme_exponent": c.sme_exponent, "gamma_boundary": c.gamma_boundary}


def run_clt(cfg: McConfig, progress=None) -> McReport:
    """KS distances and moments of the studentized statistics at each horizon."""
    if cfg.reps < 100:
        raise ConfigError("a KS verdict needs at least 100 replications")
    consts = _constants_echo(cfg)
    t0 = time.perf_counter()
    rows = [_horizon_row(cfg, T, simulate_horizon(cfg, T, progress)) for T in cfg.T_list]
    fits = _rate_fits(cfg, rows) if len(rows) >= 2 else None
    return McReport(cfg.echo(), consts, rows, fits, time.perf_counter() - t0)


def _rate_fits(cfg: McConfig, rows: list[dict]) -> dict:
    lt = np.log([r["T"] for r in rows])
    slope_lse, r2_lse = _fit(lt, np.log([r["ks_lse"] for r in rows]))
    slope_sme, r2_sme = _fit(lt, np.log([r["ks_sme"] for r in rows]))
    c = constants(cfg.spec, cfg.theta)
    return {
        "slope_lse": slope_lse,
        "slope_sme": slope_sme,
        "r2_lse": r2_lse,
        "r2_sme": r2_sme,
        "noise_floor": ks_noise_floor(cfg.reps),
        "expected_slope_lse": -c.gamma,
        "expected_slope_sme": -c.sme_exponent,
    }


def check_geometric(T_list, ratio: float = 1.5):
    if len(T_list) < 4:
        raise ConfigError("rate fits need at least 4 horizons")
    for a, b in zip(T_list, T_list[1:]):
        if b < ratio * a * (1 - 1e-12):
            raise ConfigError(f"horizons must grow geometrically (each >= {ratio}x the previous); got {a} -> {b}")


def run_rate(cfg: McConfig, progress=None) -> McReport:
    """Log-log slope of the KS distance against T.

    The fit is a diagnostic: KS estimates flatten at the sampling noise
    floor (about 0.87 / sqrt(reps)), which is reported alongside.
    """
    check_geometric(cfg.T_list)
    return run_clt(cfg, progress)


# -- consistency ------------------------------------------------------------------------


def run_consistency(cfg: McConfig, checkpoints, paths: int = 20) -> McReport:
    """One growing trajectory per replication, estimators read at each checkpoint.

    Increments for shorter horizons are prefixes of the longest one: the
    Cholesky factor of a leading principal block is the leading block of
    the full factor, so restricting the path is the same as resampling it
    on the shorter horizon.
    """
    checkpoints = sorted(float(c) for c in checkpoints)
    if not checkpoints:
        raise ConfigError("need at least one checkpoint")
    if paths < 1:
        raise ConfigError("need at least one path")
    if cfg.dt is None:
        raise ConfigError("consistency runs need a fixed step dt so horizons nest")
    t0 = time.perf_counter()
    spec, theta = cfg.spec, cfg.theta
    grid = Grid.from_step(checkpoints[-1], cfg.dt)
    cells = [Grid.from_step(c, cfg.dt).n for c in checkpoints]
    gm = gram(spec, grid)
    fac = factor(gm)
    mom = ou_moments(gm, theta)
    z = standard_normals(grid.n, cfg.seed, range(paths), _stream(checkpoints[-1]))
    dg = z @ fac.L.T
    tilde = np.empty((paths, len(cells)))
    hat = np.empty_like(tilde)
    for p in range(paths):
        x = build_ou_path(dg[p], theta, grid).x
        x2 = x * x
        for j, m in enumerate(cells):
            energy = cfg.dt * (x2[1:m].sum() + 0.5 * x2[m])
            t = m * cfg.dt
            tilde[p, j] = float(theta_from_moment(spec, energy / t))
            _, alpha = mom.at(m)
            hat[p, j] = (alpha - 0.5 * x2[m]) / energy
    err_tilde = np.abs(tilde - theta)
    err_hat = np.abs(hat - theta)
    med_tilde = np.median(err_tilde, axis=0)
    med_hat = np.median(err_hat, axis=0)
    rows = [
        {
            "T": checkpoints[j],
            "n": cells[j],
            "median_abs_err_tilde": float(med_tilde[j]),
            "median_abs_err_hat": float(med_hat[j]),
            "median_theta_tilde": float(np.median(tilde[:, j])),
            "median_theta_hat": float(np.median(hat[:, j])),
        }
        for j in range(len(cells))
    ]
    extra = {
        "paths": paths,
        "theta_tilde": tilde.tolist(),
        "theta_hat_oracle": hat.tolist(),
        "decreasing_tilde": bool(np.all(np.diff(med_tilde) < 0)),
        "decreasing_hat": bool(np.all(np.diff(med_hat) < 0)),
    }
    c = constants(spec, theta)
    config = cfg.echo() | {"checkpoints": checkpoints, "paths": paths}
    return McReport(config, {"sigma_beta2": c.sigma_beta2, "gamma": c.gamma, "a": c.a},
                    rows, None, time.perf_counter() - t0, extra)
