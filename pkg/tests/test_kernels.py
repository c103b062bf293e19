import importlib

import numpy as np
import pytest

from toddler.core import SeededRng
from toddler.kernels import _convnp

try:
    from toddler.kernels import _convext
    HAVE_EXT = True
except ImportError:
    HAVE_EXT = False

needs_ext = pytest.mark.skipif(not HAVE_EXT, reason="extension not built")


def random_case(seed, b=2, ci=3, co=4, h=6, w=5, dtype=np.float64):
    rng = SeededRng(seed)
    x = np.ascontiguousarray(rng.normal((b, ci, h, w)), dtype=dtype)
    wgt = np.ascontiguousarray(rng.normal((co, ci, 3, 3)), dtype=dtype)
    bias = np.ascontiguousarray(rng.normal(co), dtype=dtype)
    gy = np.ascontiguousarray(rng.normal((b, co, h, w)), dtype=dtype)
    return x, wgt, bias, gy


def reference_forward(x, w, b):
    """Direct per-pixel loop with replication padding (independent oracle)."""
    bsz, ci, h, wdt = x.shape
    co = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    out = np.empty((bsz, co, h, wdt), dtype=x.dtype)
    for n in range(bsz):
        for o in range(co):
            acc = np.full((h, wdt), b[o], dtype=np.float64)
            for c in range(ci):
                for dr in range(3):
                    for dc in range(3):
                        acc += w[o, c, dr, dc] * xp[n, c, dr:dr + h,
                                                    dc:dc + wdt]
            out[n, o] = acc
    return out


class TestNumpyBackend:
    def test_forward_matches_reference(self):
        x, w, b, _ = random_case(0)
        got = _convnp.conv2d_forward(x, w, b)
        assert np.allclose(got, reference_forward(x, w, b), atol=1e-12)

    def test_backward_matches_finite_differences(self):
        x, w, b, gy = random_case(1, b=1, ci=2, co=2, h=4, w=4)
        gx, gw, gb = _convnp.conv2d_backward(x, w, gy)
        h = 1e-6

        def loss(xv, wv, bv):
            return float(np.sum(_convnp.conv2d_forward(xv, wv, bv) * gy))

        rng = SeededRng(2)
        for arr, grad in ((x, gx), (w, gw), (b, gb)):
            flat = arr.reshape(-1)
            for _ in range(10):
                i = int(rng.integers(0, flat.size))
                orig = flat[i]
                flat[i] = orig + h
                lp = loss(x, w, b)
                flat[i] = orig - h
                lm = loss(x, w, b)
                flat[i] = orig
                fd = (lp - lm) / (2 * h)
                assert fd == pytest.approx(float(grad.reshape(-1)[i]),
                                           rel=1e-5, abs=1e-7)


@needs_ext
class TestBackendParity:
    @pytest.mark.parametrize("seed", range(5))
    def test_forward_parity_f64(self, seed):
        x, w, b, _ = random_case(seed)
        a = _convnp.conv2d_forward(x, w, b)
        c = _convext.conv2d_forward(x, w, b)
        assert np.allclose(a, c, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_backward_parity_f64(self, seed):
        x, w, b, gy = random_case(seed + 10)
        for a, c in zip(_convnp.conv2d_backward(x, w, gy),
                        _convext.conv2d_backward(x, w, gy)):
            assert np.allclose(a, c, atol=1e-12)

    def test_forward_parity_f32(self):
        x, w, b, _ = random_case(20, dtype=np.float32)
        a = _convnp.conv2d_forward(x, w, b)
        c = _convext.conv2d_forward(x, w, b)
        assert np.allclose(a, c, atol=1e-4)


class TestBackendSelection:
    def test_default_is_python(self, monkeypatch):
        import toddler.kernels as K
        monkeypatch.delenv("TODDLER_BACKEND", raising=False)
        mod = importlib.reload(K)
        assert mod.BACKEND == "python"

    @needs_ext
    def test_compiled_opt_in(self, monkeypatch):
        import toddler.kernels as K
        monkeypatch.setenv("TODDLER_BACKEND", "compiled")
        mod = importlib.reload(K)
        assert mod.BACKEND == "compiled"
        monkeypatch.delenv("TODDLER_BACKEND")
        importlib.reload(K)

    def test_invalid_choice_rejected(self, monkeypatch):
        import toddler.kernels as K
        monkeypatch.setenv("TODDLER_BACKEND", "gpu")
        with pytest.raises(ValueError):
            importlib.reload(K)
        monkeypatch.delenv("TODDLER_BACKEND")
        importlib.reload(K)
