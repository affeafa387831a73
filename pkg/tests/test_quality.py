import math

import numpy as np
import pytest

from rawpair.imgcore import RgbImage, rgb_to_lab
from rawpair.quality import (
    MetricReport,
    ciede2000_lab,
    delta_e_2000,
    evaluate_pairs,
    psnr,
    ssim,
)

from conftest import smooth_image, ssim_oracle


def const(v, h=16, w=16):
    return RgbImage(np.full((3, h, w), v, np.float32))


class TestPsnr:
    def test_identical_is_infinite(self, rng):
        img = RgbImage(rng.random((3, 8, 8)).astype(np.float32))
        assert math.isinf(psnr(img, img))

    def test_constant_difference_exact(self):
        # 20 dB up to float32 quantization of the stored 0.1 difference
        assert psnr(const(0.5), const(0.6)) == pytest.approx(20.0, abs=1e-5)

    def test_matches_double_loop_oracle(self, rng):
        a = RgbImage(rng.random((3, 8, 8)).astype(np.float32))
        b = RgbImage(rng.random((3, 8, 8)).astype(np.float32))
        total = 0.0
        for c in range(3):
            for i in range(8):
                for j in range(8):
                    d = float(a.planes[c, i, j]) - float(b.planes[c, i, j])
                    total += d * d
        expected = 10.0 * math.log10(1.0 / (total / (3 * 8 * 8)))
        assert psnr(a, b) == pytest.approx(expected, abs=1e-9)

    def test_symmetric(self, rng):
        a = RgbImage(rng.random((3, 8, 8)).astype(np.float32))
        b = RgbImage(rng.random((3, 8, 8)).astype(np.float32))
        assert psnr(a, b) == psnr(b, a)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            psnr(const(0.5, 8, 8), const(0.5, 8, 9))

    def test_decreases_with_noise(self, rng):
        base = smooth_image((32, 32), rng)
        values = []
        for amp in (0.01, 0.05, 0.1):
            noisy = np.clip(
                base.planes + amp * rng.uniform(-1, 1, base.planes.shape), 0, 1
            ).astype(np.float32)
            values.append(psnr(base, RgbImage(noisy)))
        assert values[0] > values[1] > values[2]


class TestSsim:
    def test_identical_is_one(self, rng):
        img = RgbImage(rng.random((3, 16, 16)).astype(np.float32))
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-9)

    def test_negation_scores_low(self, rng):
        img = smooth_image((24, 24), rng, sigma=2.0, lo=0.2, hi=0.8)
        neg = RgbImage((1.0 - img.planes).astype(np.float32))
        assert ssim(img, neg) < 0.3

    def test_matches_sliding_window_oracle(self, rng):
        a = smooth_image((16, 16), rng, sigma=1.0)
        b = smooth_image((16, 16), rng, sigma=1.5)
        assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-6)

    def test_symmetric(self, rng):
        a = RgbImage(rng.random((3, 16, 16)).astype(np.float32))
        b = RgbImage(rng.random((3, 16, 16)).astype(np.float32))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            ssim(const(0.5, 8, 8), const(0.5, 8, 8))


# Published CIEDE2000 verification pairs (Lab1, Lab2, expected dE00); the
# expected values were cross-checked against an independent reference
# implementation at build time.
CIEDE2000_PAIRS = [
    (50.0000, 2.6772, -79.7751, 50.0000, 0.0000, -82.7485, 2.0425),
    (50.0000, 3.1571, -77.2803, 50.0000, 0.0000, -82.7485, 2.8615),
    (50.0000, 2.8361, -74.0200, 50.0000, 0.0000, -82.7485, 3.4412),
    (50.0000, -1.3802, -84.2814, 50.0000, 0.0000, -82.7485, 1.0000),
    (50.0000, -1.1848, -84.8006, 50.0000, 0.0000, -82.7485, 1.0000),
    (50.0000, -0.9009, -85.5211, 50.0000, 0.0000, -82.7485, 1.0000),
    (50.0000, 0.0000, 0.0000, 50.0000, -1.0000, 2.0000, 2.3669),
    (50.0000, -1.0000, 2.0000, 50.0000, 0.0000, 0.0000, 2.3669),
    (50.0000, 2.4900, -0.0010, 50.0000, -2.4900, 0.0009, 7.1792),
    (50.0000, 2.4900, -0.0010, 50.0000, -2.4900, 0.0010, 7.1792),
    (50.0000, 2.4900, -0.0010, 50.0000, -2.4900, 0.0011, 7.2195),
    (50.0000, 2.4900, -0.0010, 50.0000, -2.4900, 0.0012, 7.2195),
    (50.0000, -0.0010, 2.4900, 50.0000, 0.0009, -2.4900, 4.8045),
    (50.0000, -0.0010, 2.4900, 50.0000, 0.0010, -2.4900, 4.8045),
    (50.0000, -0.0010, 2.4900, 50.0000, 0.0011, -2.4900, 4.7461),
    (50.0000, 2.5000, 0.0000, 50.0000, 0.0000, -2.5000, 4.3065),
    (50.0000, 2.5000, 0.0000, 73.0000, 25.0000, -18.0000, 27.1492),
    (50.0000, 2.5000, 0.0000, 61.0000, -5.0000, 29.0000, 22.8977),
    (50.0000, 2.5000, 0.0000, 56.0000, -27.0000, -3.0000, 31.9030),
    (50.0000, 2.5000, 0.0000, 58.0000, 24.0000, 15.0000, 19.4535),
    (50.0000, 2.5000, 0.0000, 50.0000, 3.1736, 0.5854, 1.0000),
    (50.0000, 2.5000, 0.0000, 50.0000, 3.2972, 0.0000, 1.0000),
    (50.0000, 2.5000, 0.0000, 50.0000, 1.8634, 0.5757, 1.0000),
    (50.0000, 2.5000, 0.0000, 50.0000, 3.2592, 0.3350, 1.0000),
    (60.2574, -34.0099, 36.2677, 60.4626, -34.1751, 39.4387, 1.2644),
    (63.0109, -31.0961, -5.8663, 62.8187, -29.7946, -4.0864, 1.2630),
    (61.2901, 3.7196, -5.3901, 61.4292, 2.2480, -4.9620, 1.8731),
    (35.0831, -44.1164, 3.7933, 35.0232, -40.0716, 1.5901, 1.8645),
    (22.7233, 20.0904, -46.6940, 23.0331, 14.9730, -42.5619, 2.0373),
    (36.4612, 47.8580, 18.3852, 36.2715, 50.5065, 21.2231, 1.4146),
    (90.8027, -2.0831, 1.4410, 91.1528, -1.6435, 0.0447, 1.4441),
    (90.9257, -0.5406, -0.9208, 88.6381, -0.8985, -0.7239, 1.5381),
    (6.7747, -0.2908, -2.4247, 5.8714, -0.0985, -2.2286, 0.6377),
    (2.0776, 0.0795, -1.1350, 0.9033, -0.0636, -0.5514, 0.9082),
]


class TestDeltaE2000:
    def test_identical_zero(self, rng):
        img = RgbImage(rng.random((3, 8, 8)).astype(np.float32))
        assert delta_e_2000(img, img) == pytest.approx(0.0, abs=1e-9)

    def test_published_verification_pairs(self):
        lab1 = np.array([p[:3] for p in CIEDE2000_PAIRS])
        lab2 = np.array([p[3:6] for p in CIEDE2000_PAIRS])
        expected = np.array([p[6] for p in CIEDE2000_PAIRS])
        got = ciede2000_lab(lab1, lab2)
        assert np.abs(got - expected).max() < 1e-4

    def test_constant_images_equal_single_pair(self):
        a, b = const(0.3), const(0.6)
        lab_a = rgb_to_lab(a)[:, 0, 0]
        lab_b = rgb_to_lab(b)[:, 0, 0]
        single = float(ciede2000_lab(lab_a[None, :], lab_b[None, :])[0])
        assert delta_e_2000(a, b) == pytest.approx(single, abs=1e-9)

    def test_symmetric(self, rng):
        a = RgbImage(rng.random((3, 8, 8)).astype(np.float32))
        b = RgbImage(rng.random((3, 8, 8)).astype(np.float32))
        assert delta_e_2000(a, b) == pytest.approx(delta_e_2000(b, a), abs=1e-9)


class TestMetricReport:
    def test_evaluate_and_serialize(self, rng, tmp_path):
        a = smooth_image((16, 16), rng)
        b = smooth_image((16, 16), rng)
        report = evaluate_pairs([("one", a, b), ("same", a, a)])
        assert report.count == 2
        d = report.to_dict()
        assert d["per_image"][1]["psnr"] == "inf"
        assert d["per_image"][1]["ssim"] == pytest.approx(1.0)
        jpath = tmp_path / "metrics.json"
        cpath = tmp_path / "metrics.csv"
        report.write_json(jpath)
        report.write_csv(cpath)
        assert jpath.exists() and cpath.exists()
        assert "one" in cpath.read_text()

    def test_mean_skips_infinite(self):
        report = MetricReport(("a", "b"), (math.inf, 20.0), (1.0, 0.5), (0.0, 2.0))
        assert report.to_dict()["mean_psnr"] == pytest.approx(20.0)
