"""Benchmark the compiled kernels against their pure-numpy twins.

Times splat_gaussians, suppress_sorted and match_scan on representative
workloads and reports the per-call time of each backend plus the speedup.
Both backends are imported directly so a single process can compare them
regardless of which one the `poresr.kernels` facade selected.
"""

import argparse
import time

import numpy as np

from poresr import _kernels_py
from poresr import kernels as facade

try:
    from poresr import _kernels

    HAVE_COMPILED = True
except ImportError:
    _kernels = None
    HAVE_COMPILED = False


def time_call(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_splat(rng, repeats):
    points = np.ascontiguousarray(rng.uniform(0, 256, size=(500, 2)))
    args = lambda: (np.zeros((256, 256)), points, 1.67, 0.85, 3.0)
    out_py = args()
    _kernels_py.splat_gaussians(*out_py)
    rows = [("python", time_call(lambda o, *a: _kernels_py.splat_gaussians(o, *a),
                                 args(), repeats))]
    if HAVE_COMPILED:
        out_c = args()
        _kernels.splat_gaussians(*out_c)
        # accumulation order differs between the twins, results do not
        assert np.allclose(out_c[0], out_py[0], atol=1e-12)
        rows.append(("cython", time_call(
            lambda o, *a: _kernels.splat_gaussians(o, *a), args(), repeats)))
    return "splat_gaussians [500 pts, 256x256]", rows


def bench_suppress(rng, repeats):
    coords = np.ascontiguousarray(rng.uniform(0, 256, size=(2000, 2)))
    keep_py = _kernels_py.suppress_sorted(coords, 2.0)
    rows = [("python", time_call(_kernels_py.suppress_sorted,
                                 (coords, 2.0), repeats))]
    if HAVE_COMPILED:
        keep_c = _kernels.suppress_sorted(coords, 2.0)
        assert np.array_equal(np.asarray(keep_c), keep_py)
        rows.append(("cython", time_call(_kernels.suppress_sorted,
                                         (coords, 2.0), repeats)))
    return "suppress_sorted [2000 candidates]", rows


def bench_match(rng, repeats):
    n_a = n_b = 1500
    pair_i = np.ascontiguousarray(
        rng.integers(0, n_a, size=100_000), dtype=np.int64)
    pair_j = np.ascontiguousarray(
        rng.integers(0, n_b, size=100_000), dtype=np.int64)
    assign_py = _kernels_py.match_scan(pair_i, pair_j, n_a, n_b)
    rows = [("python", time_call(_kernels_py.match_scan,
                                 (pair_i, pair_j, n_a, n_b), repeats))]
    if HAVE_COMPILED:
        assign_c = _kernels.match_scan(pair_i, pair_j, n_a, n_b)
        assert np.array_equal(np.asarray(assign_c), assign_py)
        rows.append(("cython", time_call(_kernels.match_scan,
                                         (pair_i, pair_j, n_a, n_b), repeats)))
    return "match_scan [100k pairs, 1500x1500]", rows


def main():
    parser = argparse.ArgumentParser(
        description="compare compiled and pure-python kernel backends")
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repeats per kernel (best is reported)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    print(f"facade backend: {facade.BACKEND}"
          f" (compiled available: {HAVE_COMPILED})")
    rng = np.random.default_rng(args.seed)
    for bench in (bench_splat, bench_suppress, bench_match):
        title, rows = bench(rng, args.repeats)
        print(f"\n{title}")
        base = dict(rows).get("python")
        for name, t in rows:
            speedup = f"  ({base / t:5.1f}x vs python)" if name == "cython" else ""
            print(f"  {name:7s} {t * 1e3:9.3f} ms{speedup}")


if __name__ == "__main__":
    main()
