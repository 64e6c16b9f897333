"""Command line interface.

Usage::

    ougauss <command> [options]

Commands: constants, check-hypothesis, simulate, estimate, hilbert-norms,
mc-clt, mc-rate, mc-consistency.

Option values are resolved in this order (later wins): built-in defaults,
``--config FILE``, environment variables ``OUGAUSS_<KEY>`` (for example
``OUGAUSS_SEED=7`` or ``OUGAUSS_THREADS=2``), command-line flags.  A config
file holds ``key = value`` lines with ``#`` comments; a JSON report written
by this tool is accepted as well and re-runs the command that produced it.

Exit codes: 0 success, 1 computational or I/O failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    ConfigError,
    KernelDomainError,
    OUGaussError,
    UnsupportedRegimeError,
)
from .estimators import RECORD_FIELDS, estimate_path
from .hilbert import Grid, contract1, f_T, gram, h_T, norm_h_sq, ou_moments, refine
from .kernels import KernelSpec, constants, hypothesis_report, parse_kernel
from .montecarlo import DEFAULT_BUDGET, McConfig, run_clt, run_consistency, run_rate
from .simulate import build_ou_path, factor, sample_increments

log = logging.getLogger("ougauss")

COMMANDS = (
    "constants", "check-hypothesis", "simulate", "estimate",
    "hilbert-norms", "mc-clt", "mc-rate", "mc-consistency",
)
ENV_PREFIX = "OUGAUSS_"

# key -> (type, default); keys are the long flag names with '-' -> '_'
OPTIONS = {
    "kernel": (str, None),
    "theta": (float, 1.0),
    "T": (float, None),
    "T_list": ("floats", None),
    "n": (int, None),
    "dt": (float, None),
    "reps": (int, None),
    "seed": (int, 0),
    "out": (str, None),
    "format": (str, None),
    "threads": (int, None),
    "modes": ("strs", None),
    "budget": (int, DEFAULT_BUDGET),
    "paths": (int, 20),
    "paths_file": (str, None),
    "long": (bool, False),
    "reproducible": (bool, False),
    "probe_min": (float, 0.01),
    "probe_max": (float, 10.0),
    "probe_n": (int, 50),
}


class UsageError(Exception):
    pass


def _convert(key: str, value):
    kind = OPTIONS[key][0]
    if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none", "null")):
        return None
    try:
        if kind == "floats":
            if isinstance(value, (list, tuple)):
                return [float(v) for v in value]
            return [float(v) for v in str(value).replace(";", ",").split(",") if v.strip()]
        if kind == "strs":
            if isinstance(value, (list, tuple)):
                return [str(v) for v in value]
            return [v.strip() for v in str(value).split(",") if v.strip()]
        if kind is bool:
            if isinstance(value, bool):
                return value
            v = str(value).strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind is int and isinstance(value, float) and value.is_integer():
            return int(value)
        return kind(value)
    except (TypeError, ValueError):
        raise UsageError(f"bad value for {key}: {value!r}") from None


def _normalise_key(key: str) -> str:
    k = key.strip().replace("-", "_")
    for name in OPTIONS:
        if name.lower() == k.lower():
            return name
    if k.lower() == "command":
        return "command"
    raise UsageError(f"unknown config key {key!r}")


def read_config_file(path: str) -> dict:
    """Parse a ``key = value`` file, or the ``config`` block of a JSON report."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
        data = data.get("config", data)
        return {_normalise_key(k): v for k, v in data.items() if v is not None}
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        out[_normalise_key(key)] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ougauss",
        description="OU drift estimation under general Gaussian noise.",
        epilog="Environment overrides: OUGAUSS_<KEY>, e.g. OUGAUSS_SEED=7, OUGAUSS_THREADS=2.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    helps = {
        "constants": "limit-theorem constants for a kernel",
        "check-hypothesis": "verify the remainder bound of the kernel on a probe grid",
        "simulate": "write simulated noise and OU paths to CSV",
        "estimate": "estimate theta from paths (read from CSV or simulated inline)",
        "hilbert-norms": "table of b_T, norms and contractions against T",
        "mc-clt": "Monte Carlo check of the asymptotic normality",
        "mc-rate": "Monte Carlo Berry-Esseen rate fit",
        "mc-consistency": "nested-horizon strong consistency runs",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name], argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="key = value file or a JSON report")
        p.add_argument("--kernel", help="e.g. fbm:H=0.6 or mix:[0.5*fbm:H=0.6;0.5*subfbm:H=0.7]")
        p.add_argument("--theta", help="drift parameter (default 1)")
        p.add_argument("--seed", help="root seed (default 0)")
        p.add_argument("--out", help="output path (default: stdout where possible)")
        p.add_argument("--format", choices=("json", "csv"))
        p.add_argument("--threads", help="cap on BLAS/numba worker threads")
        p.add_argument("--reproducible", action="store_const", const=True,
                       help="omit wall-clock runtime so reruns are byte-identical")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("simulate", "estimate", "hilbert-norms", "mc-clt", "mc-rate", "mc-consistency"):
            p.add_argument("--T", help="single horizon")
            p.add_argument("--T-list", dest="T_list", help="comma-separated horizons")
            p.add_argument("--n", help="cells per horizon")
            p.add_argument("--dt", help="grid step (alternative to --n)")
        if name in ("simulate", "estimate", "mc-clt", "mc-rate"):
            p.add_argument("--reps", help="number of replications")
        if name in ("estimate", "mc-clt", "mc-rate"):
            p.add_argument("--modes", help="comma-separated subset of oracle,plugin,chaos,sme")
        if name in ("mc-clt", "mc-rate", "mc-consistency"):
            p.add_argument("--budget", help="max reps x horizons")
        if name == "mc-consistency":
            p.add_argument("--paths", help="number of independent trajectories (default 20)")
            p.add_argument("--checkpoints", dest="T_list", help="alias of --T-list")
        if name == "simulate":
            p.add_argument("--long", action="store_const", const=True,
                           help="one long-format file with a rep column")
        if name == "estimate":
            p.add_argument("--paths-file", dest="paths_file", help="paths CSV written by 'simulate'")
        if name == "check-hypothesis":
            p.add_argument("--probe-min", dest="probe_min")
            p.add_argument("--probe-max", dest="probe_max")
            p.add_argument("--probe-n", dest="probe_n")
    return parser


def parse(argv, environ=None) -> dict:
    """Resolve argv (+ config file + environment) into a validated config dict."""
    environ = os.environ if environ is None else environ
    parser = build_parser()
    argv = list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        raise UsageError("no command given")
    ns = vars(parser.parse_args(argv))
    command = ns.pop("command")
    verbose = ns.pop("verbose", False)
    if command is None:
        raise UsageError("no command given")
    cfg = {k: default for k, (_, default) in OPTIONS.items()}
    if "config" in ns:
        from_file = read_config_file(ns.pop("config"))
        from_file.pop("command", None)
        for k, v in from_file.items():
            cfg[k] = _convert(k, v)
    for k in OPTIONS:
        env_val = environ.get(ENV_PREFIX + k.upper())
        if env_val is not None:
            cfg[k] = _convert(k, env_val)
    for k, v in ns.items():
        cfg[k] = _convert(k, v)
    cfg["command"] = command
    cfg["verbose"] = verbose
    _validate(cfg)
    return cfg


def _validate(cfg: dict):
    cmd = cfg["command"]
    if cfg["kernel"] is None:
        raise UsageError("--kernel is required")
    try:
        cfg["_spec"] = parse_kernel(cfg["kernel"])
    except KernelDomainError as exc:
        raise UsageError(str(exc)) from None
    cfg["kernel"] = str(cfg["_spec"])
    if not (cfg["theta"] > 0):
        raise UsageError("theta must be positive")
    if cfg["T"] is not None and cfg["T_list"] is not None:
        raise UsageError("give either --T or --T-list, not both")
    if cfg["n"] is not None and cfg["dt"] is not None:
        raise UsageError("give either --n or --dt, not both")
    if cfg["threads"] is not None and cfg["threads"] < 1:
        raise UsageError("threads must be positive")
    if cfg["format"] is None:
        cfg["format"] = "csv" if cmd in ("simulate", "estimate", "hilbert-norms") else "json"
    if cmd in ("simulate", "estimate", "hilbert-norms", "mc-clt", "mc-rate", "mc-consistency"):
        if cfg["T"] is None and cfg["T_list"] is None and not (cmd == "estimate" and cfg["paths_file"]):
            raise UsageError(f"{cmd} needs --T or --T-list")
        horizons = [cfg["T"]] if cfg["T"] is not None else (cfg["T_list"] or [])
        if any(not (t > 0) for t in horizons):
            raise UsageError("horizons must be positive")
        if cfg["n"] is None and cfg["dt"] is None and not (cmd == "estimate" and cfg["paths_file"]):
            if cmd == "hilbert-norms":
                cfg["n"] = 512
            else:
                cfg["dt"] = 0.02 / cfg["theta"]
        if cmd in ("simulate", "estimate") and cfg["T_list"] is not None:
            raise UsageError(f"{cmd} takes a single --T")
    if cmd == "mc-consistency" and cfg["dt"] is None:
        raise UsageError("mc-consistency needs --dt so that horizons nest")
    if cmd in ("simulate", "estimate") and cfg["reps"] is None:
        cfg["reps"] = 1
    if cmd in ("mc-clt", "mc-rate") and cfg["reps"] is None:
        cfg["reps"] = 1000
    if cfg["reps"] is not None and cfg["reps"] < 1:
        raise UsageError("reps must be positive")
    if cmd == "simulate" and cfg["reps"] > 1 and cfg["out"] is None:
        raise UsageError("simulate with several replications needs --out")
    modes = cfg["modes"]
    if modes is not None and not set(modes) <= {"oracle", "plugin", "chaos", "sme"}:
        raise UsageError("modes must be a subset of oracle,plugin,chaos,sme")


def config_echo(cfg: dict) -> dict:
    """Resolved configuration without internals or unset values."""
    out = {"command": cfg["command"]}
    for k in OPTIONS:
        v = cfg.get(k)
        if v is not None and k != "out":
            out[k] = v
    return out


# -- output helpers ---------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if v is None:
        return ""
    return str(v)


def _open_out(path):
    if path is None or path == "-":
        return nullcontext(sys.stdout)
    return open(path, "w", newline="")


def _write_csv(path, header, rows, cfg):
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[h]) for h in header])
    if path not in (None, "-"):
        _write_meta(path, cfg)


def _write_meta(path, cfg):
    """Sidecar ``<file>.meta`` in config-file syntax, usable with --config."""
    lines = [f"# written by ougauss {__version__}"]
    for k, v in config_echo(cfg).items():
        if isinstance(v, list):
            v = ",".join(_fmt(x) for x in v)
        lines.append(f"{k} = {_fmt(v)}")
    Path(str(path) + ".meta").write_text("\n".join(lines) + "\n")


def _write_json(path, payload):
    text = json.dumps(payload, indent=2, allow_nan=True) + "\n"
    with _open_out(path) as fh:
        fh.write(text)


def _envelope(cfg, body: dict) -> dict:
    return {"tool": "ougauss", "version": __version__, "seed": cfg["seed"], "config": config_echo(cfg)} | body


# -- commands ---------------------------------------------------------------------------


def cmd_constants(cfg):
    c = constants(cfg["_spec"], cfg["theta"])
    _write_json(cfg["out"], _envelope(cfg, {"kernel": cfg["kernel"]} | c.as_dict()))
    return 0


def cmd_check_hypothesis(cfg):
    probe = np.linspace(cfg["probe_min"], cfg["probe_max"], cfg["probe_n"])
    rep = hypothesis_report(cfg["_spec"], probe)
    _write_json(cfg["out"], _envelope(cfg, rep.as_dict()))
    return 0 if rep.passed else 1


def _grid(cfg, T) -> Grid:
    if cfg["n"] is not None:
        return Grid(T, cfg["n"])
    return Grid.from_step(T, cfg["dt"])


def _rep_path(out: str, rep: int) -> str:
    p = Path(out)
    return str(p.with_name(f"{p.stem}_rep{rep:04d}{p.suffix}"))


def cmd_simulate(cfg):
    spec, theta = cfg["_spec"], cfg["theta"]
    grid = _grid(cfg, cfg["T"])
    gm = gram(spec, grid)
    fac = factor(gm)
    header = ["k", "t", "dg", "g", "x"]
    long_rows = []
    for rep in range(cfg["reps"]):
        path = build_ou_path(sample_increments(fac, cfg["seed"], rep), theta, grid, cfg["seed"], rep)
        rows = [
            {"rep": rep, "k": k, "t": grid.nodes[k], "dg": path.dg[k - 1] if k else 0.0, "g": path.g[k], "x": path.x[k]}
            for k in range(grid.n + 1)
        ]
        if cfg["long"]:
            long_rows.extend(rows)
        else:
            out = cfg["out"] if cfg["reps"] == 1 else _rep_path(cfg["out"], rep)
            _write_csv(out, header, rows, cfg)
    if cfg["long"]:
        _write_csv(cfg["out"], ["rep"] + header, long_rows, cfg)
    return 0


def read_paths_csv(path: str) -> dict[int, dict]:
    """Paths CSV (single or long format) -> {rep: {"t", "dg", "x"}}."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"k", "t", "dg", "x"} <= set(rows[0]):
        raise ConfigError(f"{path}: expected columns k,t,dg,g,x (and optionally rep)")
    out: dict[int, dict] = {}
    for r in rows:
        rep = int(r.get("rep") or 0)
        d = out.setdefault(rep, {"t": [], "dg": [], "x": []})
        for key in ("t", "dg", "x"):
            d[key].append(float(r[key]))
    return {rep: {k: np.asarray(v) for k, v in d.items()} for rep, d in sorted(out.items())}


def cmd_estimate(cfg):
    spec, theta = cfg["_spec"], cfg["theta"]
    modes = cfg["modes"] or ["oracle", "plugin", "chaos"]
    records = []
    if cfg["paths_file"]:
        paths = read_paths_csv(cfg["paths_file"])
        for rep, d in paths.items():
            t = d["t"]
            grid = Grid(float(t[-1]), len(t) - 1)
            if not np.allclose(t, grid.nodes, rtol=0, atol=1e-9 * grid.T):
                raise ConfigError(f"{cfg['paths_file']}: rep {rep} is not on a uniform grid starting at 0")
            gm = gram(spec, grid)
            records.append(estimate_path(d["x"], d["dg"][1:], gm, theta, seed=cfg["seed"], rep=rep, modes=modes))
    else:
        grid = _grid(cfg, cfg["T"])
        gm = gram(spec, grid)
        fac = factor(gm)
        mom = ou_moments(gm, theta)
        for rep in range(cfg["reps"]):
            path = build_ou_path(sample_increments(fac, cfg["seed"], rep), theta, grid)
            records.append(estimate_path(path.x, path.dg, gm, theta, seed=cfg["seed"], rep=rep,
                                         modes=modes, moments=mom))
    rows = [r.row() for r in records]
    if cfg["format"] == "json":
        _write_json(cfg["out"], _envelope(cfg, {"records": rows}))
    else:
        _write_csv(cfg["out"], list(RECORD_FIELDS), rows, cfg)
    return 0


HILBERT_COLUMNS = [
    "T", "n", "b_T", "a", "norm_fT_sq_over_2thetasigma2T", "norm_hT_sq",
    "contraction_over_T", "alpha_T", "converged_flag",
]


def _hilbert_row(spec: KernelSpec, theta: float, grid: Grid) -> dict:
    c = constants(spec, theta)
    gm = gram(spec, grid)
    mom = ou_moments(gm, theta)
    F = f_T(grid, theta)
    nf = norm_h_sq(F, gm)
    return {
        "b_T": mom.b_T,
        "a": c.a,
        "norm_fT_sq_over_2thetasigma2T": nf / (2 * theta * c.sigma_beta2 * grid.T) if c.sigma_beta2 else math.nan,
        "norm_hT_sq": norm_h_sq(h_T(grid, theta), gm),
        "contraction_over_T": math.sqrt(max(norm_h_sq(contract1(F, F, gm), gm), 0.0)) / grid.T,
        "alpha_T": mom.alpha_T,
    }


def cmd_hilbert_norms(cfg):
    spec, theta = cfg["_spec"], cfg["theta"]
    horizons = [cfg["T"]] if cfg["T"] is not None else cfg["T_list"]
    rows = []
    for T in horizons:
        grid = _grid(cfg, T)
        coarse = _hilbert_row(spec, theta, grid)
        fine = _hilbert_row(spec, theta, Grid(T, 2 * grid.n))
        ok = all(
            abs(fine[k] - coarse[k]) <= 1e-3 * abs(fine[k])
            for k in coarse if math.isfinite(coarse[k]) and k != "a"
        )
        rows.append({"T": T, "n": grid.n, **coarse, "converged_flag": ok})
    if cfg["format"] == "json":
        _write_json(cfg["out"], _envelope(cfg, {"rows": rows}))
    else:
        _write_csv(cfg["out"], HILBERT_COLUMNS, rows, cfg)
    return 0


def _mc_config(cfg) -> McConfig:
    horizons = [cfg["T"]] if cfg["T"] is not None else cfg["T_list"]
    modes = tuple(cfg["modes"]) if cfg["modes"] else ("oracle", "sme")
    return McConfig(
        spec=cfg["_spec"], theta=cfg["theta"], T_list=tuple(horizons), dt=cfg["dt"], n=cfg["n"],
        reps=cfg["reps"] if cfg["reps"] is not None else 1000, seed=cfg["seed"], modes=modes,
        budget=cfg["budget"],
    )


def _progress(T, done):
    log.info("T=%g: %d replications done", T, done)


def _emit_report(cfg, report):
    d = report.as_dict(reproducible=bool(cfg["reproducible"]))
    d["config"] = config_echo(cfg)
    d = {"tool": "ougauss"} | d
    if cfg["format"] == "csv":
        rows = [{k: v for k, v in r.items() if k != "se"} | {f"se_{k}": v for k, v in r.get("se", {}).items()}
                for r in d["rows"]]
        header = list(rows[0].keys())
        _write_csv(cfg["out"], header, rows, cfg)
    else:
        _write_json(cfg["out"], d)


def cmd_mc_clt(cfg):
    _emit_report(cfg, run_clt(_mc_config(cfg), _progress))
    return 0


def cmd_mc_rate(cfg):
    _emit_report(cfg, run_rate(_mc_config(cfg), _progress))
    return 0


def cmd_mc_consistency(cfg):
    horizons = [cfg["T"]] if cfg["T"] is not None else cfg["T_list"]
    mc = McConfig(spec=cfg["_spec"], theta=cfg["theta"], T_list=(max(horizons),), dt=cfg["dt"],
                  reps=cfg["paths"], seed=cfg["seed"], budget=cfg["budget"])
    _emit_report(cfg, run_consistency(mc, horizons, cfg["paths"]))
    return 0


HANDLERS = {
    "constants": cmd_constants,
    "check-hypothesis": cmd_check_hypothesis,
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "hilbert-norms": cmd_hilbert_norms,
    "mc-clt": cmd_mc_clt,
    "mc-rate": cmd_mc_rate,
    "mc-consistency": cmd_mc_consistency,
}


def _thread_limits(threads):
    if threads is None:
        return nullcontext()
    # the compiled kernels are serial; only BLAS/LAPACK pools need capping
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def dispatch(cfg: dict) -> int:
    try:
        with _thread_limits(cfg["threads"]):
            return HANDLERS[cfg["command"]](cfg)
    except (ConfigError, UnsupportedRegimeError) as exc:
        print(f"ougauss: error: {exc}", file=sys.stderr)
        return 2
    except (OUGaussError, OSError, FloatingPointError) as exc:
        print(f"ougauss: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse(argv)
    except UsageError as exc:
        print(f"ougauss: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    if cfg["verbose"]:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", stream=sys.stderr)
    return dispatch(cfg)


if __name__ == "__main__":
    sys.exit(main())
