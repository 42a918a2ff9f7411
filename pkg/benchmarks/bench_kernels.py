"""Benchmark the accelerated kernels against their pure-numpy twins.

The package compiles its hot loops with numba when available; setting
LINGERMORT_DISABLE_NUMBA=1 forces the numpy fallback.  This script times
both implementations side by side in one process (the numba functions are
importable directly, so no re-exec is needed) and checks they agree.

Usage: python3 benchmarks/bench_kernels.py [--paths N] [--horizon H]
"""

import argparse
import time

import numpy as np

from lingermort import _kernels


def bench(fn, *args, repeat=5, warmup=1):
    for _ in range(warmup):
        fn(*args)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--horizon", type=int, default=60)
    ap.add_argument("--cells", type=int, default=78,
                    help="age x cause cells per year (13 x 6 default)")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    logm0 = rng.normal(-5.0, 1.0, args.cells)
    incr = rng.normal(0.0, 0.05, (args.paths, args.horizon, args.cells))
    hz = rng.uniform(1e-4, 0.2, (args.paths, args.horizon))

    print(f"ensemble: {args.paths} paths x {args.horizon} years x "
          f"{args.cells} cells; numba available: {_kernels.HAS_NUMBA}")

    rows = []
    out = np.empty_like(incr)
    t_np = bench(_kernels._accumulate_paths_np, logm0, incr, out)
    rows.append(("accumulate_paths", "numpy", t_np))
    if _kernels.HAS_NUMBA:
        t_nb = bench(_kernels._accumulate_paths_nb, logm0, incr, out)
        rows.append(("accumulate_paths", "numba", t_nb))
        a = _kernels._accumulate_paths_np(logm0, incr, np.empty_like(incr))
        b = _kernels._accumulate_paths_nb(logm0, incr, np.empty_like(incr))
        assert np.allclose(a, b, atol=1e-12), "kernel outputs disagree"

    out2 = np.empty_like(hz)
    t_np = bench(_kernels._cohort_survival_np, hz, out2)
    rows.append(("cohort_survival", "numpy", t_np))
    if _kernels.HAS_NUMBA:
        t_nb = bench(_kernels._cohort_survival_nb, hz, out2)
        rows.append(("cohort_survival", "numba", t_nb))
        a = _kernels._cohort_survival_np(hz, np.empty_like(hz))
        b = _kernels._cohort_survival_nb(hz, np.empty_like(hz))
        assert np.allclose(a, b, rtol=1e-12), "kernel outputs disagree"

    print(f"{'kernel':<20} {'backend':<8} {'best (ms)':>10}")
    base = {}
    for name, backend, t in rows:
        note = ""
        if backend == "numpy":
            base[name] = t
        elif name in base:
            note = f"  ({base[name] / t:.2f}x vs numpy)"
        print(f"{name:<20} {backend:<8} {1e3 * t:>10.3f}{note}")


if __name__ == "__main__":
    main()
