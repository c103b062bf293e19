# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled 3x3 convolution kernels (NCHW, 1-pixel edge-replication padding).

Same contract as _convnp.py; see kernels/__init__.py for selection. Loops
are arranged as contiguous row AXPYs over shifted input planes so the C
compiler can vectorize the W dimension.
"""

import numpy as np
cimport numpy as cnp
cimport cython

ctypedef fused floating:
    float
    double


cdef inline Py_ssize_t _clip(Py_ssize_t v, Py_ssize_t lo, Py_ssize_t hi) nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


@cython.boundscheck(False)
def conv2d_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
                   floating[::1] b):
    cdef Py_ssize_t B = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Co = w.shape[0]
    out_np = np.empty((B, Co, H, W), dtype=np.float32 if floating is float else np.float64)
    cdef floating[:, :, :, ::1] y = out_np
    cdef Py_ssize_t n, o, i, r, c, kr, kc, rr, c0, c1
    cdef floating ws, bo
    with nogil:
        for n in range(B):
            for o in range(Co):
                bo = b[o]
                for r in range(H):
                    for c in range(W):
                        y[n, o, r, c] = bo
                for i in range(Ci):
                    for kr in range(3):
                        for kc in range(3):
                            ws = w[o, i, kr, kc]
                            for r in range(H):
                                rr = _clip(r + kr - 1, 0, H - 1)
                                # interior columns: contiguous AXPY
                                c0 = 1 if kc == 0 else 0
                                c1 = W - 1 if kc == 2 else W
                                for c in range(c0, c1):
                                    y[n, o, r, c] += ws * x[n, i, rr, c + kc - 1]
                                # replicated edge columns
                                if kc == 0:
                                    y[n, o, r, 0] += ws * x[n, i, rr, 0]
                                elif kc == 2:
                                    y[n, o, r, W - 1] += ws * x[n, i, rr, W - 1]
    return out_np


@cython.boundscheck(False)
def conv2d_backward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
                    floating[:, :, :, ::1] gy):
    cdef Py_ssize_t B = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Co = w.shape[0]
    dt = np.float32 if floating is float else np.float64
    gx_np = np.zeros((B, Ci, H, W), dtype=dt)
    gw_np = np.zeros((Co, Ci, 3, 3), dtype=dt)
    gb_np = np.zeros((Co,), dtype=dt)
    cdef floating[:, :, :, ::1] gx = gx_np
    cdef floating[:, :, :, ::1] gw = gw_np
    cdef floating[::1] gb = gb_np
    cdef Py_ssize_t n, o, i, r, c, kr, kc, rr, cc, c0, c1
    cdef floating ws, acc, g
    with nogil:
        for n in range(B):
            for o in range(Co):
                for r in range(H):
                    acc = 0
                    for c in range(W):
                        acc += gy[n, o, r, c]
                    gb[o] += acc
                for i in range(Ci):
                    for kr in range(3):
                        for kc in range(3):
                            # weight gradient: dot of gy row with shifted x row
                            acc = 0
                            for r in range(H):
                                rr = _clip(r + kr - 1, 0, H - 1)
                                c0 = 1 if kc == 0 else 0
                                c1 = W - 1 if kc == 2 else W
                                for c in range(c0, c1):
                                    acc += gy[n, o, r, c] * x[n, i, rr, c + kc - 1]
                                if kc == 0:
                                    acc += gy[n, o, r, 0] * x[n, i, rr, 0]
                                elif kc == 2:
                                    acc += gy[n, o, r, W - 1] * x[n, i, rr, W - 1]
                            gw[o, i, kr, kc] += acc
                            # input gradient: scatter gy through the kernel tap
                            ws = w[o, i, kr, kc]
                            for r in range(H):
                                rr = _clip(r + kr - 1, 0, H - 1)
                                c0 = 1 if kc == 0 else 0
                                c1 = W - 1 if kc == 2 else W
                                for c in range(c0, c1):
                                    gx[n, i, rr, c + kc - 1] += ws * gy[n, o, r, c]
                                if kc == 0:
                                    gx[n, i, rr, 0] += ws * gy[n, o, r, 0]
                                elif kc == 2:
                                    gx[n, i, rr, W - 1] += ws * gy[n, o, r, W - 1]
    return gx_np, gw_np, gb_np
