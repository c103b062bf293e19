import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from toddler.core import ImageGrid, SeededRng
from toddler.degrade import (DegradationPlan, edge_map, make_plan, overlay,
                             pixelate, sketch_dropout)


def random_sketch(rng, h=16, w=16, p=0.2):
    return ImageGrid((rng.uniform(size=(h, w, 1)) < p).astype(np.float64))


class TestPlan:
    def test_defaults_shape_and_endpoints(self):
        plan = make_plan("sketch", 10)
        assert plan.kappa[0] == 1.0
        assert plan.kappa[10] == pytest.approx(0.3)
        assert np.all(np.diff(plan.kappa) <= 0)
        assert plan.kernel[0] == 1
        assert np.all(np.diff(plan.kernel) >= 0)

    def test_rejects_bad_kappa(self):
        with pytest.raises(ValueError):
            DegradationPlan("sketch", 4, kappa=np.array([1, 0.5, 0.7, 0.2, 0.1]))

    def test_rejects_bad_kernel(self):
        with pytest.raises(ValueError):
            DegradationPlan("palette", 2, kernel=np.array([1, 4, 2]))

    def test_rejects_unknown_stage(self):
        with pytest.raises(ValueError):
            make_plan("blob", 4)

    def test_alpha_coupled_kappa_tracks_signal(self):
        alpha = 1.0 - np.log1p(np.arange(11)) / np.log1p(10)
        alpha[10] = 0.0
        plan = make_plan("sketch", 10, alpha=alpha)
        assert np.allclose(plan.kappa, 0.3 + 0.7 * alpha)
        assert plan.kappa[0] == 1.0
        assert np.all(np.diff(plan.kappa) <= 0)

    def test_alpha_coupled_matches_default_for_linear(self):
        t = np.arange(11, dtype=np.float64)
        plan = make_plan("sketch", 10, alpha=1.0 - t / 10)
        assert np.allclose(plan.kappa, make_plan("sketch", 10).kappa)


class TestSketchDropout:
    def test_t0_identity(self):
        plan = make_plan("sketch", 10)
        s = random_sketch(SeededRng(0))
        out = sketch_dropout(s, 0, plan, SeededRng(1))
        assert np.array_equal(out.data, s.data)

    def test_all_black_unchanged(self):
        plan = make_plan("sketch", 10)
        out = sketch_dropout(ImageGrid.zeros(8, 8), 10, plan, SeededRng(1))
        assert out.data.sum() == 0.0

    def test_never_creates_white(self):
        plan = make_plan("sketch", 10)
        rng = SeededRng(2)
        for t in range(11):
            s = random_sketch(rng)
            out = sketch_dropout(s, t, plan, rng)
            assert np.all(out.data <= s.data)
            assert ImageGrid(out.data).is_binary()

    def test_binomial_keep_rate(self):
        # ~1000 white pixels at kappa = 0.3: count within 3 binomial sigmas
        plan = DegradationPlan("sketch", 1, kappa=np.array([1.0, 0.3]))
        sketch = ImageGrid(np.ones((40, 25, 1)))
        rng = SeededRng(3)
        counts = [sketch_dropout(sketch, 1, plan, rng).data.sum()
                  for _ in range(100)]
        n, p = 1000, 0.3
        sigma = np.sqrt(n * p * (1 - p))
        assert abs(np.mean(counts) - n * p) < 3 * sigma / np.sqrt(len(counts))

    def test_expected_white_non_increasing_in_t(self):
        plan = make_plan("sketch", 5)
        sketch = ImageGrid(np.ones((32, 32, 1)))
        rng = SeededRng(4)
        means = []
        for t in range(6):
            means.append(np.mean([sketch_dropout(sketch, t, plan, rng).data.sum()
                                  for _ in range(200)]))
        assert all(a >= b - 10 for a, b in zip(means, means[1:]))

    def test_rejects_non_binary(self):
        plan = make_plan("sketch", 5)
        with pytest.raises(ValueError):
            sketch_dropout(ImageGrid(np.full((4, 4, 1), 0.5)), 1, plan,
                           SeededRng(0))


class TestPixelate:
    def test_kernel_1_identity(self):
        rng = SeededRng(0)
        img = ImageGrid(np.clip(rng.normal((8, 8, 3)) * 0.2 + 0.5, 0, 1))
        assert np.array_equal(pixelate(img, 1).data, img.data)

    def test_full_kernel_global_mean(self):
        rng = SeededRng(1)
        img = ImageGrid(np.clip(rng.normal((8, 8, 3)) * 0.2 + 0.5, 0, 1))
        out = pixelate(img, 8).data
        for c in range(3):
            assert np.allclose(out[:, :, c], img.data[:, :, c].mean())

    def test_checkerboard(self):
        board = np.indices((4, 4)).sum(axis=0) % 2
        out = pixelate(ImageGrid(board[:, :, None].astype(float)), 2)
        assert np.allclose(out.data, 0.5)

    def test_idempotent(self):
        rng = SeededRng(2)
        img = ImageGrid(np.clip(rng.normal((16, 16, 3)) * 0.2 + 0.5, 0, 1))
        once = pixelate(img, 4)
        twice = pixelate(once, 4)
        assert np.max(np.abs(once.data - twice.data)) < 1e-12

    def test_preserves_global_mean_when_dividing(self):
        rng = SeededRng(3)
        img = ImageGrid(np.clip(rng.normal((16, 16, 3)) * 0.2 + 0.5, 0, 1))
        out = pixelate(img, 4)
        assert out.data.mean() == pytest.approx(img.data.mean(), abs=1e-12)

    def test_kernel_capped_at_image_size(self):
        img = ImageGrid(np.full((4, 4, 1), 0.25))
        out = pixelate(img, 100)
        assert np.allclose(out.data, 0.25)

    def test_stride_must_equal_kernel(self):
        with pytest.raises(ValueError):
            pixelate(ImageGrid.zeros(8, 8, 3), 4, stride=2)

    @given(st.integers(min_value=1, max_value=8))
    @settings(max_examples=10, deadline=None)
    def test_non_dividing_kernel_total(self, k):
        img = ImageGrid(np.clip(SeededRng(k).normal((7, 5, 3)) * 0.2 + 0.5, 0, 1))
        out = pixelate(img, k)
        assert out.shape == img.shape


class TestEdgeMap:
    def test_constant_image_black(self):
        out = edge_map(ImageGrid(np.full((8, 8, 3), 0.6)))
        assert out.data.sum() == 0.0

    def test_vertical_step_edge_band(self):
        img = np.zeros((8, 8, 3))
        img[:, 4:] = 1.0
        out = edge_map(ImageGrid(img)).data[:, :, 0]
        white_cols = np.flatnonzero(out.any(axis=0))
        assert set(white_cols) == {3, 4}  # 1-2 px boundary band only

    def test_binary_and_deterministic(self):
        rng = SeededRng(5)
        img = ImageGrid(np.clip(rng.normal((16, 16, 3)) * 0.3 + 0.5, 0, 1))
        a = edge_map(img)
        b = edge_map(img)
        assert a.is_binary()
        assert np.array_equal(a.data, b.data)

    def test_requires_rgb(self):
        with pytest.raises(ValueError):
            edge_map(ImageGrid.zeros(4, 4, 1))


class TestOverlay:
    def test_all_black_sketch_is_palette(self):
        pal = ImageGrid(np.full((4, 4, 3), 0.7))
        out = overlay(ImageGrid.zeros(4, 4), pal)
        assert np.array_equal(out.data, pal.data)

    def test_all_white_sketch_is_line_color(self):
        pal = ImageGrid(np.full((4, 4, 3), 0.7))
        out = overlay(ImageGrid(np.ones((4, 4, 1))), pal)
        assert np.allclose(out.data, 0.1)

    def test_single_pixel(self):
        pal = ImageGrid(np.full((4, 4, 3), 0.7))
        sk = np.zeros((4, 4, 1))
        sk[2, 3] = 1.0
        out = overlay(ImageGrid(sk), pal).data
        diff = np.any(out != pal.data, axis=2)
        assert diff[2, 3] and diff.sum() == 1

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            overlay(ImageGrid.zeros(4, 4), ImageGrid.zeros(5, 5, 3))
