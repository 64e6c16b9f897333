"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--n 2000] [--reps 500] [--repeat 5]

The numba versions are compiled once before timing.
"""

import argparse
import time

import numpy as np

from ougauss import _accel
from ougauss import hilbert as hb
from ougauss import kernels as K


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000, help="grid cells")
    ap.add_argument("--reps", type=int, default=500, help="paths per batch")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    if _accel.nb is None:
        raise SystemExit("numba is not installed; nothing to compare")

    gm = hb.gram(K.fbm(0.6), hb.Grid(args.n * 0.02, args.n))
    dg = np.random.default_rng(0).normal(size=(args.reps, args.n)) * 0.05
    decay, gain = np.exp(-0.02), np.exp(-0.01)
    w = gm.grid.weights
    cross = _accel.lagged_cross_sums_numpy(gm.gamma, 1.0, gm.grid.dt)
    diag = np.diag(gm.gamma).copy()

    cases = {
        "ou_paths": (lambda f: f(dg, decay, gain)),
        "ou_summaries": (lambda f: f(dg, decay, gain, w)),
        "lagged_cross_sums": (lambda f: f(gm.gamma, 1.0, gm.grid.dt)),
        "variance_recursion": (lambda f: f(diag, cross, decay, gain)),
    }
    print(f"n={args.n} reps={args.reps} best of {args.repeat}")
    print(f"{'kernel':<20}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}")
    for name, call in cases.items():
        f_np = getattr(_accel, f"{name}_numpy")
        f_nb = getattr(_accel, f"{name}_numba")
        call(f_nb)  # compile
        r_np, r_nb = call(f_np), call(f_nb)
        as_tuple = lambda r: r if isinstance(r, tuple) else (r,)
        for a, b in zip(as_tuple(r_np), as_tuple(r_nb)):
            assert np.allclose(a, b, rtol=1e-10, atol=1e-14), name
        t_np = best_of(lambda: call(f_np), args.repeat)
        t_nb = best_of(lambda: call(f_nb), args.repeat)
        print(f"{name:<20}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
