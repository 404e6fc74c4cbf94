#!/usr/bin/env python3
"""Benchmark: compiled Cython kernels vs the pure-Python (numpy) fallback.

Times the per-operator forward kernels on representative shapes plus a full
tiny-cnn inference, verifies along the way that both backends agree bit for
bit, and prints a speedup table.

Run from the repo root after installing the package:

    python3 benchmarks/bench_kernels.py [--repeats 30]
"""

import argparse
import time

import numpy as np

from faultforge._kernels import _ops_py

try:
    from faultforge._kernels import _ops_cy
except ImportError:
    _ops_cy = None

rng = np.random.default_rng(7)


def f32(*shape):
    return rng.standard_normal(shape).astype(np.float32)


CASES = [
    # (label, op name, args builder)
    ("conv2d 3x16x16 k3 (tiny-cnn L0)",
     "conv2d", lambda: (f32(3, 16, 16), f32(8, 3, 3, 3), f32(8), 1, 1)),
    ("conv2d 8x8x8 k3 (tiny-cnn L1)",
     "conv2d", lambda: (f32(8, 8, 8), f32(16, 8, 3, 3), f32(16), 1, 1)),
    ("conv2d 16x64x64 k3 (large)",
     "conv2d", lambda: (f32(16, 64, 64), f32(16, 16, 3, 3), f32(16), 1, 1)),
    ("conv3d 2x4x8x8 k2x3x3 (tiny-3d)",
     "conv3d", lambda: (f32(2, 4, 8, 8), f32(4, 2, 2, 3, 3), f32(4), 1, 1)),
    ("linear 256->10 (tiny-cnn head)",
     "linear", lambda: (f32(256), f32(10, 256), f32(10))),
    ("linear 4096->256 (large)",
     "linear", lambda: (f32(4096), f32(256, 4096), f32(256))),
    ("maxpool2d 16x64x64 k2",
     "maxpool2d", lambda: (f32(16, 64, 64), 2, 2)),
]


def time_op(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_ops(repeats):
    print(f"{'case':<36} {'python':>12} {'compiled':>12} {'speedup':>8}")
    print("-" * 72)
    for label, op, build in CASES:
        args = build()
        py_fn = getattr(_ops_py, op)
        t_py = time_op(py_fn, args, repeats)
        if _ops_cy is None:
            print(f"{label:<36} {t_py * 1e3:>10.3f}ms {'n/a':>12} {'-':>8}")
            continue
        cy_fn = getattr(_ops_cy, op)
        out_py, out_cy = py_fn(*args), cy_fn(*args)
        assert np.array_equal(out_py.view(np.uint32), out_cy.view(np.uint32)), \
            f"backend mismatch on {label}"
        t_cy = time_op(cy_fn, args, repeats)
        print(f"{label:<36} {t_py * 1e3:>10.3f}ms {t_cy * 1e3:>10.3f}ms "
              f"{t_py / t_cy:>7.1f}x")


def bench_forward(repeats):
    from faultforge.model_registry import get_model

    model = get_model("tiny-cnn")
    x = rng.random(model.input_shape).astype(np.float32)
    print()
    print(f"tiny-cnn full forward ({len(model.layers)} layers), best of {repeats}:")
    import faultforge._kernels as k

    # tensor_core resolves the ops through the _kernels module at call time,
    # so swapping the attributes redirects the whole model
    for backend, impl in (("python", _ops_py), ("compiled", _ops_cy)):
        if impl is None:
            continue
        k.conv2d, k.conv3d = impl.conv2d, impl.conv3d
        k.linear, k.maxpool2d = impl.linear, impl.maxpool2d
        t = time_op(model.forward, (x,), repeats)
        print(f"  {backend:<10} {t * 1e3:8.3f} ms/inference")
    if _ops_cy is not None:
        k.conv2d, k.conv3d = _ops_cy.conv2d, _ops_cy.conv3d
        k.linear, k.maxpool2d = _ops_cy.linear, _ops_cy.maxpool2d


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()
    if _ops_cy is None:
        print("compiled backend not available; timing the fallback only\n")
    bench_ops(args.repeats)
    bench_forward(args.repeats)


if __name__ == "__main__":
    main()
