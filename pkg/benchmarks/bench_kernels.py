#!/usr/bin/env python3
"""Timing comparison of the compiled kernels against the numpy fallback.

Run as ``python benchmarks/bench_kernels.py [--size 512x256] [--repeat 3]``.
Both backends are imported directly, so the PANFUSE_PURE switch is not
needed here; results also cross-check that outputs agree.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from panfuse import kernels
from panfuse.kernels import _purepy

try:
    from panfuse.kernels import _native
except ImportError:
    _native = None


def timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--size", default="512x256", help="WxH of the synthetic inputs")
    parser.add_argument("--radius", type=int, default=3)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    w, h = (int(v) for v in args.size.lower().split("x"))

    rng = np.random.default_rng(0)
    boundary = rng.random((h, w))
    offsets, starts, cells = kernels._offset_tables(args.radius)

    labels = rng.integers(0, 5, (h, w)).astype(np.int64)
    active = (rng.random((h, w)) > 0.1).astype(np.uint8)

    values = rng.integers(0, 10_000, (h, w)).astype(np.uint32)
    seed = (rng.random((h, w)) > 0.3).astype(np.uint8)

    cases = [
        (
            f"pairwise_line_max {w}x{h} r={args.radius}",
            lambda be: be.pairwise_line_max(boundary, offsets, starts, cells),
            lambda a, b: all(np.array_equal(x, y) for x, y in zip(a, b)),
        ),
        (
            f"label_components {w}x{h} (8-conn)",
            lambda be: be.label_components(labels, active, 8),
            lambda a, b: a[1] == b[1] and np.array_equal(a[0], b[0]),
        ),
        (
            f"nearest_seed_fill {w}x{h} (70% seeds)",
            lambda be: be.nearest_seed_fill(values, seed),
            np.array_equal,
        ),
    ]

    print(f"{'kernel':42s} {'purepy':>10s} {'native':>10s} {'speedup':>9s}")
    for name, call, same in cases:
        t_pure, out_pure = timeit(lambda: call(_purepy), args.repeat)
        if _native is None:
            print(f"{name:42s} {t_pure * 1e3:9.1f}ms {'n/a':>10s} {'':>9s}")
            continue
        t_nat, out_nat = timeit(lambda: call(_native), args.repeat)
        assert same(out_pure, out_nat), f"backend mismatch in {name}"
        print(
            f"{name:42s} {t_pure * 1e3:9.1f}ms {t_nat * 1e3:9.1f}ms "
            f"{t_pure / t_nat:8.1f}x"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
