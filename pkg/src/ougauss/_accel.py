"""Hot loops, compiled with numba when available.

Every kernel exists twice: a ``*_numba`` version compiled with ``@njit`` and a
``*_numpy`` fallback.  The public name dispatches on ``USE_NUMBA``, which is
false when numba cannot be imported or when the environment variable
``OUGAUSS_DISABLE_NUMBA`` is set to a non-empty value other than ``0``.

Both paths must agree to rounding; tests compare them directly.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba as nb
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None

_flag = os.environ.get("OUGAUSS_DISABLE_NUMBA", "").strip().lower()
USE_NUMBA = nb is not None and _flag in ("", "0", "false", "no")


# -- OU recursion ------------------------------------------------------------------
#
# x[k+1] = decay * x[k] + gain * dg[k],  x[0] = 0,
# applied row-wise to a (reps, n) increment array.


def ou_paths_numpy(dg, decay, gain):
    dg = np.atleast_2d(dg)
    reps, n = dg.shape
    x = np.zeros((reps, n + 1))
    for k in range(n):
        x[:, k + 1] = decay * x[:, k] + gain * dg[:, k]
    return x


def ou_summaries_numpy(dg, decay, gain, weights):
    """Weighted sum of x_k^2 over nodes and the terminal value x_n, per row."""
    dg = np.atleast_2d(dg)
    reps, n = dg.shape
    xk = np.zeros(reps)
    acc = weights[0] * xk * xk
    for k in range(n):
        xk = decay * xk + gain * dg[:, k]
        acc = acc + weights[k + 1] * xk * xk
    return acc, xk


def lagged_cross_sums_numpy(gamma, theta, dt):
    """c[k] = sum_{i<k} gamma[k, i] * exp(-theta (k - i - 1/2) dt)."""
    n = gamma.shape[0]
    lag = np.arange(n)[:, None] - np.arange(n)[None, :]
    w = np.where(lag > 0, np.exp(-theta * (lag - 0.5) * dt), 0.0)
    return (gamma * w).sum(axis=1)


def variance_recursion_numpy(gamma_diag, cross, decay, gain):
    """q[k] = Var x[k] for the OU recursion, from diag(gamma) and the cross sums."""
    n = gamma_diag.shape[0]
    q = np.zeros(n + 1)
    for k in range(n):
        q[k + 1] = decay * decay * q[k] + 2 * decay * gain * cross[k] + gain * gain * gamma_diag[k]
    return q


if nb is not None:

    @nb.njit(cache=True)
    def ou_paths_numba(dg, decay, gain):
        reps, n = dg.shape
        x = np.zeros((reps, n + 1))
        for r in range(reps):
            for k in range(n):
                x[r, k + 1] = decay * x[r, k] + gain * dg[r, k]
        return x

    @nb.njit(cache=True)
    def ou_summaries_numba(dg, decay, gain, weights):
        reps, n = dg.shape
        acc = np.zeros(reps)
        last = np.zeros(reps)
        for r in range(reps):
            xk = 0.0
            a = 0.0
            for k in range(n):
                xk = decay * xk + gain * dg[r, k]
                a += weights[k + 1] * xk * xk
            acc[r] = a
            last[r] = xk
        return acc, last

    @nb.njit(cache=True)
    def lagged_cross_sums_numba(gamma, theta, dt):
        n = gamma.shape[0]
        # exp table indexed by lag - 1
        table = np.empty(n)
        for m in range(n):
            table[m] = np.exp(-theta * (m + 0.5) * dt)
        c = np.zeros(n)
        for k in range(1, n):
            s = 0.0
            for i in range(k):
                s += gamma[k, i] * table[k - i - 1]
            c[k] = s
        return c

    @nb.njit(cache=True)
    def variance_recursion_numba(gamma_diag, cross, decay, gain):
        n = gamma_diag.shape[0]
        q = np.zeros(n + 1)
        for k in range(n):
            q[k + 1] = decay * decay * q[k] + 2 * decay * gain * cross[k] + gain * gain * gamma_diag[k]
        return q


def _pick(name):
    if USE_NUMBA:
        return globals()[name + "_numba"]
    return globals()[name + "_numpy"]


def ou_paths(dg, decay, gain):
    """OU paths (reps, n+1) from increments (reps, n)."""
    dg = np.ascontiguousarray(np.atleast_2d(dg), dtype=float)
    return _pick("ou_paths")(dg, float(decay), float(gain))


def ou_summaries(dg, decay, gain, weights):
    """(sum_k weights[k] x_k^2, x_n) per row without materialising the paths."""
    dg = np.ascontiguousarray(np.atleast_2d(dg), dtype=float)
    weights = np.ascontiguousarray(weights, dtype=float)
    return _pick("ou_summaries")(dg, float(decay), float(gain), weights)


def lagged_cross_sums(gamma, theta, dt):
    gamma = np.ascontiguousarray(gamma, dtype=float)
    return _pick("lagged_cross_sums")(gamma, float(theta), float(dt))


def variance_recursion(gamma_diag, cross, decay, gain):
    gamma_diag = np.ascontiguousarray(gamma_diag, dtype=float)
    cross = np.ascontiguousarray(cross, dtype=float)
    return _pick("variance_recursion")(gamma_diag, cross, float(decay), float(gain))
