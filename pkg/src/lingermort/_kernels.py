"""Hot numeric loops with optional numba acceleration.

Set LINGERMORT_DISABLE_NUMBA=1 to force the pure-numpy implementations
(useful for debugging and for the benchmark comparison).
"""

from __future__ import annotations

import os

import numpy as np

_DISABLE = os.environ.get("LINGERMORT_DISABLE_NUMBA", "").strip() not in ("", "0")

try:
    if _DISABLE:
        raise ImportError
    from numba import njit
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        if args and callable(args[0]):
            return args[0]
        return wrap


def _accumulate_paths_np(logm0, incr, out):
    """out[p, t] = logm0 + sum_{s<=t} incr[p, s] along the year axis."""
    np.cumsum(incr, axis=1, out=out)
    out += logm0[None, None, :]
    return out


def _cohort_survival_np(hazards, out):
    """out[p, t] = exp(-sum_{s<=t} hazards[p, s])."""
    np.cumsum(hazards, axis=1, out=out)
    np.exp(-out, out=out)
    return out


@njit(cache=True)
def _accumulate_paths_nb(logm0, incr, out):  # pragma: no cover - numba path
    P, H, n = incr.shape
    for p in range(P):
        for j in range(n):
            acc = logm0[j]
            for t in range(H):
                acc += incr[p, t, j]
                out[p, t, j] = acc
    return out


@njit(cache=True)
def _cohort_survival_nb(hazards, out):  # pragma: no cover - numba path
    P, H = hazards.shape
    for p in range(P):
        acc = 0.0
        for t in range(H):
            acc += hazards[p, t]
            out[p, t] = np.exp(-acc)
    return out


def accumulate_paths(logm0, incr):
    """Cumulate per-year log-rate increments into log-rate paths.

    logm0: (n,) starting log rates; incr: (P, H, n); returns (P, H, n)."""
    logm0 = np.ascontiguousarray(logm0, dtype=np.float64)
    incr = np.ascontiguousarray(incr, dtype=np.float64)
    out = np.empty_like(incr)
    if HAS_NUMBA:
        return _accumulate_paths_nb(logm0, incr, out)
    return _accumulate_paths_np(logm0, incr, out)


def cohort_survival(hazards):
    """Survival probabilities from per-year hazards, shape (P, H) -> (P, H)."""
    hazards = np.ascontiguousarray(hazards, dtype=np.float64)
    out = np.empty_like(hazards)
    if HAS_NUMBA:
        return _cohort_survival_nb(hazards, out)
    return _cohort_survival_np(hazards, out)
