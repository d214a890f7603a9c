"""Timing comparison of the compiled kernel core against the pure-numpy
fallback.  Run directly:

    python3 benchmarks/bench_kernels.py [--sizes 128,512,2048]

Both backends produce identical outputs (asserted here on every case), so
the only difference worth reporting is wall time.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from lsx.kernels import COMPILED, _fallback
from lsx.transport import _dist_matrix

if COMPILED:
    from lsx.kernels import _core
else:
    _core = None


def _time(fn, *args, repeats: int = 5):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def _row(name: str, n: int, slow: float, fast: float | None) -> None:
    if fast is None:
        print(f"{name:12s} n={n:<6d} fallback {slow*1e3:9.3f} ms   (compiled core not built)")
    else:
        print(f"{name:12s} n={n:<6d} fallback {slow*1e3:9.3f} ms   compiled {fast*1e3:9.3f} ms   {slow/fast:6.1f}x")


def bench(sizes) -> None:
    rng = np.random.default_rng(0)
    for n in sizes:
        pts = rng.uniform(-0.5, 0.5, (n, 2))
        k = max(4, n // 4)

        t_slow, ref = _time(_fallback.fps, pts, k, 0)
        t_fast = None
        if _core is not None:
            t_fast, got = _time(_core.fps, pts, k, 0)
            assert np.array_equal(ref, got)
        _row("fps", n, t_slow, t_fast)

        centers = ref[: min(64, k)]
        t_slow, ref_g = _time(_fallback.ball_query, pts, centers, 0.2, 16)
        t_fast = None
        if _core is not None:
            t_fast, got = _time(_core.ball_query, pts, centers, 0.2, 16)
            assert np.array_equal(ref_g, got)
        _row("ball_query", n, t_slow, t_fast)

        other = rng.uniform(-0.5, 0.5, (n, 2))
        t_slow, ref_d = _time(_fallback.nn_sqdist, pts, other)
        t_fast = None
        if _core is not None:
            t_fast, got = _time(_core.nn_sqdist, pts, other)
            assert np.array_equal(ref_d, got)
        _row("nn_sqdist", n, t_slow, t_fast)

        m = min(n, 256)
        cost = np.ascontiguousarray(_dist_matrix(pts[:m], other[:m]))
        eps0 = float(cost.max()) / 4.0
        t_slow, (ref_a, _) = _time(_fallback.auction, cost, eps0, 5e-4, 7.0, 10_000 * m + 10_000)
        t_fast = None
        if _core is not None:
            t_fast, (got_a, _) = _time(_core.auction, cost, eps0, 5e-4, 7.0, 10_000 * m + 10_000)
            assert np.array_equal(ref_a, got_a)
        _row("auction", m, t_slow, t_fast)
        print()


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="128,512,2048")
    args = ap.parse_args()
    print(f"compiled core available: {COMPILED}\n")
    bench([int(s) for s in args.sizes.split(",")])
