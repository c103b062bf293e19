"""Benchmark the two 3x3 convolution backends (compiled Cython extension
vs NumPy im2col+GEMM) on denoiser-shaped workloads.

Run: python3 benchmarks/bench_kernels.py [--repeats 5]
Imports both implementation modules directly so a single process can time
them side by side regardless of TODDLER_BACKEND.
"""

import argparse
import time

import numpy as np

from toddler.kernels import _convnp

try:
    from toddler.kernels import _convext
except ImportError:
    _convext = None

# (batch, in-channels, out-channels, side): training and sampling shapes
# for the small/medium/large presets on the 32x32 canvas
CASES = [
    ("small fwd batch=32", 32, 16, 16, 32),
    ("small fwd batch=1", 1, 16, 16, 32),
    ("medium fwd batch=32", 32, 32, 32, 32),
    ("large fwd batch=32", 32, 64, 64, 32),
]


def time_fn(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--dtype", choices=["f32", "f64"], default="f32")
    args = ap.parse_args()
    dtype = np.float32 if args.dtype == "f32" else np.float64

    impls = [("python", _convnp)]
    if _convext is not None:
        impls.append(("compiled", _convext))
    else:
        print("compiled extension not built; benchmarking python only")

    header = f"{'case':24s} {'op':8s}" + "".join(
        f" {name:>10s}" for name, _ in impls)
    print(header)
    print("-" * len(header))
    rng = np.random.default_rng(0)
    for label, b, ci, co, side in CASES:
        x = rng.standard_normal((b, ci, side, side)).astype(dtype)
        w = rng.standard_normal((co, ci, 3, 3)).astype(dtype) * 0.1
        bias = np.zeros(co, dtype=dtype)
        gy = rng.standard_normal((b, co, side, side)).astype(dtype)

        fwd_times = []
        bwd_times = []
        outs = []
        for _, mod in impls:
            fwd_times.append(time_fn(lambda m=mod: m.conv2d_forward(x, w, bias),
                                     args.repeats))
            bwd_times.append(time_fn(lambda m=mod: m.conv2d_backward(x, w, gy),
                                     args.repeats))
            outs.append(mod.conv2d_forward(x, w, bias))
        if len(outs) == 2:
            err = float(np.max(np.abs(outs[0] - outs[1])))
            assert err < (1e-3 if dtype == np.float32 else 1e-10), \
                f"backend outputs diverge: {err}"
        print(f"{label:24s} {'forward':8s}"
              + "".join(f" {t * 1e3:9.2f}ms" for t in fwd_times))
        print(f"{'':24s} {'backward':8s}"
              + "".join(f" {t * 1e3:9.2f}ms" for t in bwd_times))
    if len(impls) == 2:
        print("\n(best-of-{} per cell; lower is better)".format(args.repeats))


if __name__ == "__main__":
    main()
