"""Benchmark the numba kernels against the pure-numpy fallbacks.

Times the three hot matcher kernels (SAD similarity, local contrast
enhancement, constant-velocity line search) on a deployment-sized
workload and prints the per-backend wall times plus speedups.

Usage:
    python3 benchmarks/compare_backends.py [--n-ref 2000] [--n-query 300]
        [--dim 512] [--reps 5]

Run with SEQPLACE_PURE_NUMPY=1 to confirm the fallback also drives the
full package (this script always times both backends directly).
"""

import argparse
import os
import time

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("NUMBA_NUM_THREADS", "1")

import numpy as np

from seqplace import _kernels
from seqplace.core import seeded_rng


def time_call(fn, *args, reps):
    fn(*args)  # warm-up / JIT compile
    best = float("inf")
    for _ in range(reps):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n-ref", type=int, default=2000)
    parser.add_argument("--n-query", type=int, default=300)
    parser.add_argument("--dim", type=int, default=512)
    parser.add_argument("--ds", type=int, default=10)
    parser.add_argument("--reps", type=int, default=5)
    args = parser.parse_args()

    rng = seeded_rng(0)
    ref = rng.standard_normal((args.n_ref, args.dim))
    query = rng.standard_normal((args.n_query, args.dim))
    matrix = rng.uniform(0.0, 2.0, (args.n_ref, args.n_query))
    et = np.ascontiguousarray(matrix.T)
    offsets = np.rint(np.outer([0.8, 0.9, 1.0, 1.1, 1.2],
                               np.arange(args.ds))).astype(np.int64)

    workloads = {
        "sad_matrix": (ref, query),
        "enhance": (matrix, 10),
        "line_scores": (et, args.ds, offsets),
    }

    backends = list(_kernels.IMPLEMENTATIONS)
    print(f"active backend: {_kernels.active_backend()}   "
          f"(set {_kernels.PURE_NUMPY_ENV}=1 to force numpy)")
    print(f"workload: n_ref={args.n_ref} n_query={args.n_query} "
          f"dim={args.dim} ds={args.ds}, best of {args.reps}\n")
    header = f"{'kernel':<14}" + "".join(f"{b + ' (s)':>14}" for b in backends)
    if "numba" in backends:
        header += f"{'speedup':>10}"
    print(header)
    for name, work in workloads.items():
        times = {}
        for backend in backends:
            times[backend] = time_call(_kernels.IMPLEMENTATIONS[backend][name],
                                       *work, reps=args.reps)
        row = f"{name:<14}" + "".join(f"{times[b]:>14.4f}" for b in backends)
        if "numba" in times:
            row += f"{times['numpy'] / times['numba']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
