"""Compare the compiled kernels with the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the best-of-N wall time of each backend,
the speedup and the largest absolute difference between their outputs.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from press import _kernels


def best_time(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a), np.asarray(b)
    both = np.isfinite(a) & np.isfinite(b)
    return float(np.max(np.abs(a[both] - b[both]))) if both.any() else 0.0


def cases(rng):
    a = rng.uniform(0.8, 0.999, size=(2, 4000, 16))
    b = rng.normal(size=(2, 4000, 16))
    shape = rng.uniform(0.5, 80.0, size=200_000)
    xs = rng.uniform(0.0, 120.0, size=200_000)
    lg = rng.uniform(1e-3, 1e3, size=200_000)
    x = rng.normal(size=(2, 1000, 128))
    w = rng.normal(size=(128, 65))
    g = rng.normal(size=(2, 1000, 128))
    return {
        "linear_scan [2,4000,16]": lambda k: k.linear_scan(a, b),
        "gamma_p 2e5": lambda k: k.gamma_p(shape, xs),
        "ln_gamma 2e5": lambda k: k.ln_gamma(lg),
        "depthwise_conv [2,1000,128] K=65": lambda k: k.depthwise_conv(x, w, 32, 32),
        "depthwise_conv_grad [2,1000,128] K=65": lambda k: k.depthwise_conv_grad(x, w, g, 32),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if _kernels.compiled_backend is None:
        print("compiled kernels are not built; only the numpy backend is available")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'compiled s':>11s} {'numpy s':>11s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, fn in cases(rng).items():
        tc, oc = best_time(lambda: fn(_kernels.compiled_backend), args.repeat)
        tn, on = best_time(lambda: fn(_kernels.numpy_backend), args.repeat)
        print(f"{name:40s} {tc:11.4f} {tn:11.4f} {tn / tc:8.1f} {max_diff(oc, on):11.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
