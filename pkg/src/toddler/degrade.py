"""Stage-dependent degradations and human-free guidance extraction.

Sketch dropout thins the white pixels of a binary sketch (more aggressively
for larger t), pixelation replaces blocks with their mean color, the edge
map is a thresholded Laplacian on luminance, and overlay fuses a sketch
onto a palette.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ImageGrid, as_array

STAGES = ("sketch", "palette", "detailed")

LUMA = np.array([0.299, 0.587, 0.114])
DEFAULT_EDGE_TAU = 0.1
DEFAULT_LINE_COLOR = 0.1
PALETTE_KERNEL = 8


@dataclass(frozen=True)
class DegradationPlan:
    """Per-timestep degradation strength for one stage.

    kappa[t] is the white-pixel keep rate for sketch dropout (kappa[0] = 1,
    non-increasing). kernel[t] is the pixelation block size (kernel[0] = 1,
    non-decreasing); the stride always equals the kernel so blocks do not
    overlap.
    """

    stage: str
    T: int
    kappa: np.ndarray = field(default=None)
    kernel: np.ndarray = field(default=None)
    edge_tau: float = DEFAULT_EDGE_TAU

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        T = int(self.T)
        kappa = self.kappa
        if kappa is None:
            # keeps >= 30% of the white pixels even at t = T so control
            # points survive the most aggressive masking
            kappa = 1.0 - 0.7 * np.arange(T + 1) / T
        kappa = np.asarray(kappa, dtype=np.float64)
        kernel = self.kernel
        if kernel is None:
            # power-of-two block sizes stepped evenly across t
            ladder = np.array([1, 2, 4, 8])
            idx = np.minimum((np.arange(T + 1) * len(ladder)) // (T + 1),
                             len(ladder) - 1)
            kernel = ladder[idx]
            kernel[0] = 1
        kernel = np.asarray(kernel, dtype=np.int64)
        if kappa[0] != 1.0 or np.any(np.diff(kappa) > 0) or np.any(kappa <= 0):
            raise ValueError("kappa must start at 1 and be non-increasing in (0,1]")
        if kernel[0] != 1 or np.any(np.diff(kernel) < 0) or np.any(kernel < 1):
            raise ValueError("kernel must start at 1 and be non-decreasing")
        kappa.flags.writeable = False
        kernel.flags.writeable = False
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "kernel", kernel)


def make_plan(stage, T, edge_tau=DEFAULT_EDGE_TAU, alpha=None):
    """Build a degradation plan for one stage.

    When the stage's schedule mixing weights are passed as `alpha`, the
    dropout keep-rate tracks the signal level: kappa_t = 0.3 + 0.7 * alpha_t,
    so the target degrades exactly as fast as the schedule removes signal.
    For a linear schedule this equals the default 1 - 0.7 * t / T.
    """
    kappa = None
    if alpha is not None:
        kappa = 0.3 + 0.7 * np.asarray(alpha, dtype=np.float64)
    return DegradationPlan(stage=stage, T=int(T), kappa=kappa,
                           edge_tau=edge_tau)


def _check_binary(arr, what="sketch"):
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValueError(f"{what} must be binary (values in {{0, 1}})")


def sketch_dropout(sketch, t, plan, rng):
    """Keep each white pixel independently with probability kappa_t."""
    arr = as_array(sketch)
    _check_binary(arr)
    t = int(t)
    if not (0 <= t <= plan.T):
        raise ValueError(f"t={t} out of range [0, {plan.T}]")
    kappa = plan.kappa[t]
    if kappa >= 1.0:
        return ImageGrid(arr)
    keep = rng.uniform(size=arr.shape) < kappa
    return ImageGrid(np.where(keep, arr, 0.0))


def pixelate(img, kernel, stride=None):
    """Replace each kernel x kernel block by its channel-wise mean.

    The stride must equal the kernel. Kernels larger than the image are
    capped; non-dividing kernels are handled by replication padding.
    """
    arr = as_array(img)
    k = int(kernel)
    if stride is not None and int(stride) != k:
        raise ValueError("stride must equal kernel (non-overlapping blocks)")
    if k < 1:
        raise ValueError("kernel must be >= 1")
    h, w, c = arr.shape
    k = min(k, h, w)
    if k == 1:
        return ImageGrid(arr)
    ph = (k - h % k) % k
    pw = (k - w % k) % k
    padded = np.pad(arr, ((0, ph), (0, pw), (0, 0)), mode="edge")
    hh, ww = padded.shape[0] // k, padded.shape[1] // k
    blocks = padded.reshape(hh, k, ww, k, c).mean(axis=(1, 3))
    out = np.repeat(np.repeat(blocks, k, axis=0), k, axis=1)[:h, :w]
    return ImageGrid(out)


_LAPLACIAN = np.array([[0.0, 1.0, 0.0],
                       [1.0, -4.0, 1.0],
                       [0.0, 1.0, 0.0]])


def edge_map(rgb, tau=DEFAULT_EDGE_TAU):
    """Binary contour map: |3x3 Laplacian of luminance| > tau."""
    arr = as_array(rgb)
    if arr.shape[2] != 3:
        raise ValueError("edge_map expects a 3-channel image")
    lum = arr @ LUMA
    padded = np.pad(lum, 1, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3))
    lap = np.einsum("hwkl,kl->hw", windows, _LAPLACIAN)
    return ImageGrid((np.abs(lap) > tau).astype(np.float64)[:, :, None])


def overlay(sketch, palette, line_color=DEFAULT_LINE_COLOR):
    """Palette wherever the sketch is black, line color where it is white."""
    s = as_array(sketch)
    p = as_array(palette)
    _check_binary(s)
    if s.shape[2] != 1 or p.shape[2] != 3:
        raise ValueError("overlay expects a 1-channel sketch and 3-channel palette")
    if s.shape[:2] != p.shape[:2]:
        raise ValueError(f"shape mismatch {s.shape[:2]} vs {p.shape[:2]}")
    return ImageGrid(np.where(s == 1.0, line_color, p))
