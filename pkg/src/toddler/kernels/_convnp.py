"""NumPy (im2col + GEMM) implementation of the 3x3 convolution kernels.

Layout is NCHW, padding is 1-pixel edge replication so spatial size is
preserved. The compiled extension in _convext.pyx implements the same
contract; backend selection happens in __init__.py.
"""

import numpy as np


def _replicate_pad(x):
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")


def _im2col(x):
    """(B,Ci,H,W) -> (B*H*W, Ci*9) patch matrix over the padded input."""
    b, ci, h, w = x.shape
    xp = _replicate_pad(x)
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    # (B, Ci, H, W, 3, 3) -> (B, H, W, Ci, 3, 3)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(b * h * w, ci * 9)


def conv2d_forward(x, w, b):
    """x: (B,Cin,H,W), w: (Cout,Cin,3,3), b: (Cout,) -> (B,Cout,H,W)."""
    bs, ci, h, ww = x.shape
    co = w.shape[0]
    cols = _im2col(x)
    y = cols @ w.reshape(co, ci * 9).T
    y += b[None, :]
    return np.ascontiguousarray(
        y.reshape(bs, h, ww, co).transpose(0, 3, 1, 2))


def conv2d_backward(x, w, gy):
    """Gradients of conv2d_forward. Returns (gx, gw, gb)."""
    bs, ci, h, ww = x.shape
    co = w.shape[0]
    cols = _im2col(x)
    gy2 = np.ascontiguousarray(gy.transpose(0, 2, 3, 1)).reshape(-1, co)
    gw = (gy2.T @ cols).reshape(co, ci, 3, 3)
    gb = gy2.sum(axis=0)

    gcols = (gy2 @ w.reshape(co, ci * 9)).reshape(bs, h, ww, ci, 3, 3)
    gcols = gcols.transpose(0, 3, 4, 5, 1, 2)  # (B, Ci, 3, 3, H, W)
    gxp = np.zeros((bs, ci, h + 2, ww + 2), dtype=x.dtype)
    for kr in range(3):
        for kc in range(3):
            gxp[:, :, kr:kr + h, kc:kc + ww] += gcols[:, :, kr, kc]

    # Fold the edge-replication padding back onto the border pixels.
    gx = gxp[:, :, 1:-1, 1:-1].copy()
    gx[:, :, 0, :] += gxp[:, :, 0, 1:-1]
    gx[:, :, -1, :] += gxp[:, :, -1, 1:-1]
    gx[:, :, :, 0] += gxp[:, :, 1:-1, 0]
    gx[:, :, :, -1] += gxp[:, :, 1:-1, -1]
    gx[:, :, 0, 0] += gxp[:, :, 0, 0]
    gx[:, :, 0, -1] += gxp[:, :, 0, -1]
    gx[:, :, -1, 0] += gxp[:, :, -1, 0]
    gx[:, :, -1, -1] += gxp[:, :, -1, -1]
    return np.ascontiguousarray(gx), gw, gb
