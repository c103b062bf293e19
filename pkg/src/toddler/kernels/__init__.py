"""Convolution kernel backend selection.

Two interchangeable implementations of the 3x3 conv kernels exist: a
compiled Cython extension (_convext) and a NumPy im2col+GEMM fallback
(_convnp). On single-core hosts the BLAS-backed NumPy path measures
faster (see benchmarks/bench_kernels.py), so it is the default; set
TODDLER_BACKEND=compiled to select the extension (raises if it failed to
build) or TODDLER_BACKEND=python to force the fallback explicitly.
"""

import os

from . import _convnp

_CHOICE = os.environ.get("TODDLER_BACKEND", "python").strip().lower()

if _CHOICE == "compiled":
    from . import _convext as _impl
    BACKEND = "compiled"
elif _CHOICE == "python":
    BACKEND = "python"
    _impl = _convnp
else:
    raise ValueError(f"TODDLER_BACKEND must be 'python' or 'compiled', "
                     f"got {_CHOICE!r}")

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward

__all__ = ["BACKEND", "conv2d_forward", "conv2d_backward"]
