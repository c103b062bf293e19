"""Small differentiable denoiser p(x0 | x_t, y, t) with manual reverse-mode
gradients, plus the adaptive-moment optimizer used to train it.

The architecture is a flat residual 3x3 conv stack (replication padding)
with a sinusoidal time embedding injected per block through a learned
affine. Presets ladder the width and depth: small (16, 1 block),
medium (32, 2), large (64, 3). At 32x32 the encoder-decoder depth of a
full U-Net buys nothing.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .core import Checkpoint, ImageGrid, SeededRng, as_array

PRESETS = {
    "small": (16, 1),
    "medium": (32, 2),
    "large": (64, 3),
}

EMBED_DIM = 32


def time_embedding(t, dtype=np.float64):
    """Sinusoidal embedding of integer timesteps, shape (B, EMBED_DIM)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = EMBED_DIM // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(dtype)


def _silu(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s


def _silu_grad(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return s * (1.0 + z * (1.0 - s))


class Denoiser:
    """x0 predictor over concat(x_t, y). Parameters live in a flat dict."""

    def __init__(self, preset, in_channels, out_channels, seed=0,
                 dtype=np.float32, params=None):
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}")
        self.preset = preset
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.dtype = np.dtype(dtype)
        self.width, self.n_blocks = PRESETS[preset]
        if params is not None:
            self.params = {k: np.ascontiguousarray(v, dtype=self.dtype)
                           for k, v in params.items()}
        else:
            self.params = self._init_params(seed)

    def _init_params(self, seed):
        rng = SeededRng(seed, stream_id=0xD0)
        ch = self.width
        p = {}

        def conv(name, cin, cout):
            fan_in = cin * 9
            p[f"{name}.w"] = (rng.normal((cout, cin, 3, 3))
                              * np.sqrt(2.0 / fan_in)).astype(self.dtype)
            p[f"{name}.b"] = np.zeros(cout, dtype=self.dtype)

        conv("conv_in", self.in_channels, ch)
        for k in range(self.n_blocks):
            conv(f"block{k}.conv1", ch, ch)
            p[f"block{k}.temb.w"] = (rng.normal((EMBED_DIM, ch))
                                     * np.sqrt(2.0 / EMBED_DIM)).astype(self.dtype)
            p[f"block{k}.temb.b"] = np.zeros(ch, dtype=self.dtype)
            conv(f"block{k}.conv2", ch, ch)
        conv("conv_out", ch, self.out_channels)
        return p

    def parameter_count(self):
        return sum(v.size for v in self.params.values())

    def astype(self, dtype):
        return Denoiser(self.preset, self.in_channels, self.out_channels,
                        dtype=dtype, params=self.params)

    # -- forward / backward ---------------------------------------------------

    def _prep(self, x_t, y, t):
        x = as_array(x_t)
        ya = as_array(y)
        single = x.ndim == 3
        if single:
            x, ya = x[None], ya[None]
        if x.shape[:3] != ya.shape[:3]:
            raise ValueError(f"x_t/y spatial mismatch {x.shape} vs {ya.shape}")
        if x.shape[3] + ya.shape[3] != self.in_channels:
            raise ValueError(
                f"expected {self.in_channels} input channels, got "
                f"{x.shape[3]} + {ya.shape[3]}")
        xin = np.concatenate([x, ya], axis=3)
        xin = np.ascontiguousarray(xin.transpose(0, 3, 1, 2), dtype=self.dtype)
        t = np.broadcast_to(np.atleast_1d(t), (xin.shape[0],))
        temb = time_embedding(t, dtype=self.dtype)
        return xin, temb, single

    def _forward_cached(self, xin, temb):
        p = self.params
        cache = {"xin": xin, "temb": temb}
        z0 = kernels.conv2d_forward(xin, p["conv_in.w"], p["conv_in.b"])
        cache["z0"] = z0
        h = _silu(z0)
        for k in range(self.n_blocks):
            cache[f"h{k}"] = h
            tb = temb @ p[f"block{k}.temb.w"] + p[f"block{k}.temb.b"]
            z1 = kernels.conv2d_forward(h, p[f"block{k}.conv1.w"],
                                        p[f"block{k}.conv1.b"])
            z1 = z1 + tb[:, :, None, None]
            cache[f"z1_{k}"] = z1
            a = _silu(z1)
            cache[f"a{k}"] = a
            z2 = kernels.conv2d_forward(a, p[f"block{k}.conv2.w"],
                                        p[f"block{k}.conv2.b"])
            pre = h + z2
            cache[f"pre{k}"] = pre
            h = _silu(pre)
        cache["h_last"] = h
        out = kernels.conv2d_forward(h, p["conv_out.w"], p["conv_out.b"])
        return out, cache

    def forward(self, x_t, y, t):
        """Predict x0. Accepts a single (H,W,C) grid or a (B,H,W,C) batch."""
        xin, temb, single = self._prep(x_t, y, t)
        out, _ = self._forward_cached(xin, temb)
        out = out.transpose(0, 2, 3, 1)
        return out[0] if single else out

    def _backward(self, cache, gout):
        p = self.params
        g = {}
        gh, g["conv_out.w"], g["conv_out.b"] = kernels.conv2d_backward(
            cache["h_last"], p["conv_out.w"], np.ascontiguousarray(gout))
        for k in reversed(range(self.n_blocks)):
            d_pre = np.ascontiguousarray(gh * _silu_grad(cache[f"pre{k}"]))
            ga, g[f"block{k}.conv2.w"], g[f"block{k}.conv2.b"] = \
                kernels.conv2d_backward(cache[f"a{k}"], p[f"block{k}.conv2.w"],
                                        d_pre)
            dz1 = np.ascontiguousarray(ga * _silu_grad(cache[f"z1_{k}"]))
            dtb = dz1.sum(axis=(2, 3))
            g[f"block{k}.temb.w"] = cache["temb"].T @ dtb
            g[f"block{k}.temb.b"] = dtb.sum(axis=0)
            gh_in, g[f"block{k}.conv1.w"], g[f"block{k}.conv1.b"] = \
                kernels.conv2d_backward(cache[f"h{k}"], p[f"block{k}.conv1.w"],
                                        dz1)
            gh = d_pre + gh_in
        dz0 = np.ascontiguousarray(gh * _silu_grad(cache["z0"]))
        _, g["conv_in.w"], g["conv_in.b"] = kernels.conv2d_backward(
            cache["xin"], p["conv_in.w"], dz0)
        return g

    def loss_and_grads(self, x_t, y, t, target):
        """Mean-squared-error loss over the batch plus parameter gradients."""
        xin, temb, single = self._prep(x_t, y, t)
        if xin.shape[0] == 0:
            raise ValueError("empty batch")
        tgt = as_array(target)
        if single:
            tgt = tgt[None]
        tgt = np.ascontiguousarray(tgt.transpose(0, 3, 1, 2), dtype=self.dtype)
        out, cache = self._forward_cached(xin, temb)
        diff = out - tgt
        loss = float(np.mean(diff.astype(np.float64) ** 2))
        gout = (2.0 / diff.size) * diff
        grads = self._backward(cache, gout.astype(self.dtype))
        return loss, grads

    # -- serialization --------------------------------------------------------

    def to_checkpoint(self, metadata=None):
        meta = dict(metadata or {})
        meta.update({
            "preset": self.preset,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
        })
        return Checkpoint(metadata=meta, tensors=dict(self.params))

    @staticmethod
    def from_checkpoint(ckpt):
        meta = ckpt.metadata
        return Denoiser(meta["preset"], meta["in_channels"],
                        meta["out_channels"], dtype=np.float32,
                        params=ckpt.tensors)


class Adam:
    """Bias-corrected adaptive-moment optimizer."""

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999,
                 eps=1e-8):
        self.lr = float(learning_rate)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
        self.v = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}

    def step(self, params, grads):
        for k, gv in grads.items():
            if not np.all(np.isfinite(gv)):
                raise FloatingPointError(f"non-finite gradient for {k}")
        self.step_count += 1
        b1t = 1.0 - self.beta1 ** self.step_count
        b2t = 1.0 - self.beta2 ** self.step_count
        for k, p in params.items():
            gv = grads[k].astype(np.float64)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * gv
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * gv * gv
            mhat = self.m[k] / b1t
            vhat = self.v[k] / b2t
            upd = self.lr * mhat / (np.sqrt(vhat) + self.eps)
            params[k] = (p.astype(np.float64) - upd).astype(p.dtype)
        return params


def init(preset, in_channels, out_channels, seed=0, dtype=np.float32):
    return Denoiser(preset, in_channels, out_channels, seed=seed, dtype=dtype)
