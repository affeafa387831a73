import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rawpair.imgcore import RawPatch, RgbImage
from rawpair.rawproc import RawProcConfig, demosaic, gamma_encode, normalize, preprocess


def const_patch(value, h=2, w=2):
    return RawPatch(np.full((h, w, 4), value, np.uint16))


class TestNormalize:
    def test_full_scale(self):
        out = normalize(const_patch(1023))
        assert np.allclose(out, 1.0)

    def test_zero(self):
        assert np.allclose(normalize(const_patch(0)), 0.0)

    def test_black_level_closed_form(self):
        cfg = RawProcConfig(black_level=64, white_level=1023)
        out = normalize(const_patch(512), cfg)
        assert np.allclose(out, (512 - 64) / 959, atol=1e-7)

    def test_gains_clamp(self):
        cfg = RawProcConfig(wb_gains=(2.0, 1.0, 1.0, 0.5))
        out = normalize(const_patch(1023), cfg)
        assert np.allclose(out[:, :, 0], 1.0)  # clamped after gain
        assert np.allclose(out[:, :, 3], 0.5)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RawProcConfig(black_level=1023, white_level=1023)
        with pytest.raises(ValueError):
            RawProcConfig(gamma=0.0)
        with pytest.raises(ValueError):
            RawProcConfig(denoise="median")


class TestDemosaic:
    def test_constant_planes_fixed_point(self):
        norm = np.full((3, 3, 4), 0.4, np.float32)
        img = demosaic(norm)
        assert img.planes.shape == (3, 6, 6)
        assert np.allclose(img.planes, 0.4, atol=1e-6)

    def test_zero(self):
        img = demosaic(np.zeros((2, 2, 4), np.float32))
        assert np.all(img.planes == 0.0)

    def test_hand_computed_interior_stencils(self):
        # 2x2 patch -> 4x4 mosaic:
        #   r00 g00 r01 g01
        #   h00 b00 h01 b01
        #   r10 g10 r11 g11
        #   h10 b10 h11 b11
        r = np.array([[0.10, 0.20], [0.30, 0.40]])
        g = np.array([[0.50, 0.60], [0.70, 0.80]])
        h = np.array([[0.05, 0.15], [0.25, 0.35]])
        b = np.array([[0.90, 0.82], [0.74, 0.66]])
        norm = np.stack([r, g, h, b], axis=-1)
        img = demosaic(norm).planes.astype(np.float64)

        # Interior pixel (1,1): B site b00. R = mean of 4 diagonal R samples,
        # G = mean of 4 cross greens, B exact.
        assert img[0, 1, 1] == pytest.approx(np.mean([0.10, 0.20, 0.30, 0.40]), abs=1e-6)
        assert img[1, 1, 1] == pytest.approx(np.mean([0.50, 0.70, 0.05, 0.15]), abs=1e-6)
        assert img[2, 1, 1] == pytest.approx(0.90, abs=1e-6)
        # Interior pixel (1,2): green site h01. R = mean(r01, r11), B = mean(b00, b01).
        assert img[0, 1, 2] == pytest.approx(np.mean([0.20, 0.40]), abs=1e-6)
        assert img[1, 1, 2] == pytest.approx(0.15, abs=1e-6)
        assert img[2, 1, 2] == pytest.approx(np.mean([0.90, 0.82]), abs=1e-6)
        # Interior pixel (2,1): green site g10. R = mean(r10, r11), B = mean(b00, b10).
        assert img[0, 2, 1] == pytest.approx(np.mean([0.30, 0.40]), abs=1e-6)
        assert img[1, 2, 1] == pytest.approx(0.70, abs=1e-6)
        assert img[2, 2, 1] == pytest.approx(np.mean([0.90, 0.74]), abs=1e-6)
        # Interior pixel (2,2): R site r11. G = mean of cross greens, B = diagonal mean.
        assert img[0, 2, 2] == pytest.approx(0.40, abs=1e-6)
        assert img[1, 2, 2] == pytest.approx(np.mean([0.15, 0.35, 0.70, 0.80]), abs=1e-6)
        assert img[2, 2, 2] == pytest.approx(np.mean([0.90, 0.82, 0.74, 0.66]), abs=1e-6)

    def test_sample_sites_preserved(self):
        r = np.random.default_rng(1)
        norm = r.random((4, 4, 4)).astype(np.float32)
        img = demosaic(norm).planes
        assert np.allclose(img[0, 0::2, 0::2], norm[:, :, 0], atol=1e-6)
        assert np.allclose(img[1, 0::2, 1::2], norm[:, :, 1], atol=1e-6)
        assert np.allclose(img[1, 1::2, 0::2], norm[:, :, 2], atol=1e-6)
        assert np.allclose(img[2, 1::2, 1::2], norm[:, :, 3], atol=1e-6)


class TestGamma:
    def test_fixed_points(self):
        img = RgbImage(np.array([0.0, 1.0, 0.5] * 4, np.float32).reshape(3, 2, 2))
        out = gamma_encode(img, 2.2)
        assert out.planes[0, 0, 0] == 0.0
        assert out.planes[0, 0, 1] == 1.0

    def test_quarter_closed_form(self):
        img = RgbImage(np.full((3, 2, 2), 0.25, np.float32))
        out = gamma_encode(img, 2.2)
        assert np.allclose(out.planes, 0.25 ** (1 / 2.2), atol=1e-6)

    def test_gamma_one_identity(self):
        img = RgbImage(np.random.default_rng(2).random((3, 3, 3)).astype(np.float32))
        assert np.array_equal(gamma_encode(img, 1.0).planes, img.planes)


class TestPreprocess:
    def test_zero_raw(self):
        assert np.all(preprocess(const_patch(0)).planes == 0.0)

    def test_white_raw(self):
        out = preprocess(const_patch(1023))
        assert np.allclose(out.planes, 1.0, atol=1e-6)

    def test_composition_matches_stages(self):
        r = np.random.default_rng(3)
        raw = RawPatch(r.integers(0, 1024, (4, 4, 4), dtype=np.uint16))
        cfg = RawProcConfig(black_level=16, gamma=2.2)
        expected = gamma_encode(demosaic(normalize(raw, cfg)), cfg.gamma)
        assert np.array_equal(preprocess(raw, cfg).planes, expected.planes)

    def test_output_shape(self):
        raw = const_patch(100, h=3, w=5)
        out = preprocess(raw)
        assert (out.height, out.width) == (6, 10)

    def test_box_denoise_smooths(self):
        r = np.random.default_rng(4)
        raw = RawPatch(r.integers(0, 1024, (6, 6, 4), dtype=np.uint16))
        plain = preprocess(raw, RawProcConfig(denoise="off"))
        smooth = preprocess(raw, RawProcConfig(denoise="box3"))
        tv = lambda p: np.abs(np.diff(p, axis=1)).sum() + np.abs(np.diff(p, axis=2)).sum()
        assert tv(smooth.planes.astype(np.float64)) < tv(plain.planes.astype(np.float64))

    @given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
    @settings(max_examples=30, deadline=None)
    def test_monotone_under_global_scaling(self, seed, k):
        r = np.random.default_rng(seed)
        samples = r.integers(0, 1024, (3, 3, 4), dtype=np.uint16)
        scaled = np.floor(samples.astype(np.float64) * k).astype(np.uint16)
        out_full = preprocess(RawPatch(samples)).planes.astype(np.float64)
        out_scaled = preprocess(RawPatch(scaled)).planes.astype(np.float64)
        assert np.all(out_scaled <= out_full + 1e-6)

    def test_output_in_unit_interval(self):
        r = np.random.default_rng(6)
        raw = RawPatch(r.integers(0, 1024, (5, 5, 4), dtype=np.uint16))
        out = preprocess(raw, RawProcConfig(wb_gains=(2.0, 1.5, 1.5, 2.0)))
        assert out.planes.min() >= 0.0 and out.planes.max() <= 1.0
