"""Desk-scale quality metrics: toy Fréchet distance on fixed downsampled
features, MSE/PSNR, and slack-tolerant contour F1.

The toy Fréchet metric fits a Gaussian to 8x8x3 block-mean features and is
deliberately NOT comparable to Inception-based FID numbers; it exists to
rank obviously-better vs obviously-worse sample sets deterministically.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg as sla

from .core import as_array

FEATURE_GRID = 8
MIN_SET_SIZE = 32
COV_REG = 1e-6
PSNR_INF = np.inf


def features(images):
    """Stack of images -> (N, 192) block-mean features.

    Accepts a list of ImageGrids/arrays or an (N, H, W, C) array. 1-channel
    images are replicated to 3 channels.
    """
    arrs = [as_array(im) for im in images]
    feats = []
    for a in arrs:
        h, w, c = a.shape
        if c == 1:
            a = np.repeat(a, 3, axis=2)
        kh, kw = h // FEATURE_GRID, w // FEATURE_GRID
        if kh < 1 or kw < 1:
            raise ValueError(f"image {a.shape} too small for {FEATURE_GRID}x"
                             f"{FEATURE_GRID} features")
        a = a[: kh * FEATURE_GRID, : kw * FEATURE_GRID]
        blocks = a.reshape(FEATURE_GRID, kh, FEATURE_GRID, kw, 3).mean(axis=(1, 3))
        feats.append(blocks.reshape(-1))
    return np.asarray(feats)


def feature_stats(images):
    f = features(images)
    mu = f.mean(axis=0)
    sigma = np.cov(f, rowvar=False)
    sigma = np.atleast_2d(sigma)
    return mu, sigma


def _sqrtm_psd(mat):
    """Symmetric PSD square root via eigendecomposition."""
    sym = (mat + mat.T) / 2.0
    vals, vecs = sla.eigh(sym)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_from_stats(mu_a, sigma_a, mu_b, sigma_b):
    d = mu_a.size
    reg = COV_REG * np.eye(d)
    sa = sigma_a + reg
    sb = sigma_b + reg
    root_a = _sqrtm_psd(sa)
    cross = _sqrtm_psd(root_a @ sb @ root_a)
    val = float(np.sum((mu_a - mu_b) ** 2)
                + np.trace(sa) + np.trace(sb) - 2.0 * np.trace(cross))
    return max(val, 0.0)


def toy_frechet(set_a, set_b):
    """Fréchet distance between Gaussian feature fits of two image sets."""
    fa = features(set_a)
    fb = features(set_b)
    if fa.shape[0] < MIN_SET_SIZE or fb.shape[0] < MIN_SET_SIZE:
        raise ValueError(f"each set needs >= {MIN_SET_SIZE} images")
    mu_a, sig_a = fa.mean(0), np.cov(fa, rowvar=False)
    mu_b, sig_b = fb.mean(0), np.cov(fb, rowvar=False)
    return frechet_from_stats(mu_a, sig_a, mu_b, sig_b)


def mse(a, b):
    aa, bb = as_array(a), as_array(b)
    if aa.shape != bb.shape:
        raise ValueError(f"shape mismatch {aa.shape} vs {bb.shape}")
    return float(np.mean((aa - bb) ** 2))


def psnr(a, b, peak=1.0):
    e = mse(a, b)
    if e == 0.0:
        return PSNR_INF
    return float(10.0 * np.log10(peak * peak / e))


def _dilate(mask, slack):
    """Chebyshev dilation of a binary (H, W) mask by `slack` pixels."""
    if slack <= 0:
        return mask
    h, w = mask.shape
    padded = np.pad(mask, slack)
    out = np.zeros_like(mask, dtype=bool)
    for dr in range(2 * slack + 1):
        for dc in range(2 * slack + 1):
            out |= padded[dr:dr + h, dc:dc + w].astype(bool)
    return out.astype(mask.dtype)


def contour_f1(pred, gt, slack=1):
    """Precision/recall F1 with matches within `slack` Chebyshev distance."""
    p = as_array(pred)[:, :, 0]
    g = as_array(gt)[:, :, 0]
    for arr, name in ((p, "pred"), (g, "gt")):
        if not np.all((arr == 0.0) | (arr == 1.0)):
            raise ValueError(f"{name} sketch must be binary")
    if p.shape != g.shape:
        raise ValueError("shape mismatch")
    n_p, n_g = p.sum(), g.sum()
    if n_p == 0 and n_g == 0:
        return 1.0
    if n_p == 0 or n_g == 0:
        return 0.0
    precision = float((p * _dilate(g, slack)).sum() / n_p)
    recall = float((g * _dilate(p, slack)).sum() / n_g)
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)
