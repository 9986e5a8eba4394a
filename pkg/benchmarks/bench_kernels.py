"""Compiled vs NumPy kernels: LSTM forward/backward, temporal gaps, Gini split search.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]
"""
from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from gazemask._backend import get_kernels


def _lstm_case(dtype, B=64, L=100, h=64, seed=0):
    rng = np.random.default_rng(seed)
    pre = rng.standard_normal((L, B, 4 * h)).astype(dtype)
    w_h = (0.1 * rng.standard_normal((4 * h, h))).astype(dtype)
    d_hs = rng.standard_normal((L, B, h)).astype(dtype)
    return pre, w_h, d_hs


def bench_backend(k, repeat: int) -> dict[str, float]:
    out = {}
    for dtype in (np.float32, np.float64):
        pre, w_h, d_hs = _lstm_case(dtype)
        name = np.dtype(dtype).name

        def fwd():
            g = pre.copy()
            return k.lstm_forward(g, w_h)

        out[f"lstm_forward[{name}]"] = min(timeit.repeat(fwd, number=1, repeat=repeat))
        g = pre.copy()
        hs, cs = k.lstm_forward(g, w_h)
        out[f"lstm_backward[{name}]"] = min(timeit.repeat(lambda: k.lstm_backward(d_hs, g, cs, w_h), number=1, repeat=repeat))
    rng = np.random.default_rng(1)
    mask = (rng.random((6000, 4)) > 0.3).astype(np.uint8)
    out["temporal_gaps[6000x4]"] = min(timeit.repeat(lambda: k.temporal_gaps(mask, 1 / 60), number=1, repeat=repeat))
    x = np.sort(rng.standard_normal(3000))
    y = rng.integers(0, 3, 3000).astype(np.int64)
    out["best_gini_split[3000]"] = min(timeit.repeat(lambda: k.best_gini_split(x, y, 3, 1), number=1, repeat=repeat))
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    py = bench_backend(get_kernels("python"), args.repeat)
    try:
        cy = bench_backend(get_kernels("cython"), args.repeat)
    except ImportError:
        cy = None
        print("compiled extension not built; showing the NumPy fallback only")
    print(f"{'kernel':28s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for key, t in py.items():
        if cy:
            print(f"{key:28s} {t * 1e3:10.3f} {cy[key] * 1e3:10.3f} {t / cy[key]:8.2f}")
        else:
            print(f"{key:28s} {t * 1e3:10.3f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"python": py, "cython": cy}, fh, indent=2)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
