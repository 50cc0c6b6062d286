#!/usr/bin/env python3
"""Benchmark the compiled LCS kernel against the pure-Python fallback.

Usage: python3 benchmarks/bench_kernels.py

Sequence lengths mirror the scoring workloads: short phenotype answers,
mid-size contexts, and full-length diagnosis generations.
"""

from __future__ import annotations

import random
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from oncoeval._kernels import BACKEND  # noqa: E402
from oncoeval._kernels.pure import lcs_len as pure_lcs_len  # noqa: E402

try:
    from oncoeval._kernels._speedups import lcs_len as compiled_lcs_len
except ImportError:
    compiled_lcs_len = None

WORKLOADS = (
    ("phenotype answers", 8, 8, 2000),
    ("short contexts", 60, 60, 300),
    ("diagnosis outputs", 300, 300, 20),
    ("long vs short", 500, 50, 60),
)


def bench(fn, pairs, repeats=3) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        for a, b in pairs:
            fn(a, b)
        best = min(best, time.perf_counter() - start)
    return best


def main() -> int:
    rng = random.Random(7)
    print(f"selected backend at import: {BACKEND}")
    if compiled_lcs_len is None:
        print("compiled kernel not built (python3 setup.py build_ext --inplace); benchmarking pure only")
    header = f"{'workload':<20} {'pairs':>6} {'pure':>10} {'compiled':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, len_a, len_b, n_pairs in WORKLOADS:
        pairs = [
            (
                [rng.randrange(50) for _ in range(len_a)],
                [rng.randrange(50) for _ in range(len_b)],
            )
            for _ in range(n_pairs)
        ]
        pure_s = bench(pure_lcs_len, pairs)
        if compiled_lcs_len is None:
            print(f"{name:<20} {n_pairs:>6} {pure_s * 1e3:>8.1f}ms {'-':>10} {'-':>8}")
            continue
        for a, b in pairs[:10]:
            assert pure_lcs_len(a, b) == compiled_lcs_len(a, b)
        compiled_s = bench(compiled_lcs_len, pairs)
        print(
            f"{name:<20} {n_pairs:>6} {pure_s * 1e3:>8.1f}ms {compiled_s * 1e3:>8.1f}ms "
            f"{pure_s / compiled_s:>7.1f}x"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
