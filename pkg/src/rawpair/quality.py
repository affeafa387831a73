"""Evaluation metrics: PSNR, single-scale SSIM on luma, and CIEDE2000.

These exist to score paired fixtures (synthetic or held-out); they use the
standard parameterizations so numbers are comparable to published values
even though the exact challenge evaluation code is not public.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate

from .imgcore import RgbImage, rgb_to_lab
from .objective import _yuv64

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_sizes(a: RgbImage, b: RgbImage) -> None:
    if a.planes.shape != b.planes.shape:
        raise ValueError(f"image size mismatch: {a.planes.shape} vs {b.planes.shape}")


def psnr(a: RgbImage, b: RgbImage) -> float:
    """10 log10(1 / MSE) over all channels; identical images give +inf."""
    _check_sizes(a, b)
    diff = a.planes.astype(np.float64) - b.planes.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: RgbImage, b: RgbImage) -> float:
    """Single-scale SSIM on luma: 11x11 Gaussian window (sigma 1.5),
    K1=0.01, K2=0.03, averaged over fully valid window positions."""
    _check_sizes(a, b)
    h, w = a.height, a.width
    if min(h, w) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW} px per side")
    x = _yuv64(a.planes.astype(np.float64))[0]
    y = _yuv64(b.planes.astype(np.float64))[0]
    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    half = SSIM_WINDOW // 2

    def smooth(img):
        return correlate(img, kernel, mode="constant")[half:-half, half:-half]

    mu_x = smooth(x)
    mu_y = smooth(y)
    var_x = smooth(x * x) - mu_x**2
    var_y = smooth(y * y) - mu_y**2
    cov = smooth(x * y) - mu_x * mu_y
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ciede2000_lab(lab1: np.ndarray, lab2: np.ndarray) -> np.ndarray:
    """CIEDE2000 color difference for stacked Lab triples (..., 3),
    kL = kC = kH = 1."""
    l1, a1, b1 = np.moveaxis(np.asarray(lab1, dtype=np.float64), -1, 0)
    l2, a2, b2 = np.moveaxis(np.asarray(lab2, dtype=np.float64), -1, 0)

    c1 = np.hypot(a1, b1)
    c2 = np.hypot(a2, b2)
    c_bar = 0.5 * (c1 + c2)
    g = 0.5 * (1.0 - np.sqrt(c_bar**7 / (c_bar**7 + 25.0**7)))
    a1p = (1.0 + g) * a1
    a2p = (1.0 + g) * a2
    c1p = np.hypot(a1p, b1)
    c2p = np.hypot(a2p, b2)
    h1p = np.degrees(np.arctan2(b1, a1p)) % 360.0
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360.0
    h1p = np.where(c1p == 0.0, 0.0, h1p)
    h2p = np.where(c2p == 0.0, 0.0, h2p)

    dl = l2 - l1
    dc = c2p - c1p
    dh = h2p - h1p
    dh = np.where(dh > 180.0, dh - 360.0, dh)
    dh = np.where(dh < -180.0, dh + 360.0, dh)
    dh = np.where(c1p * c2p == 0.0, 0.0, dh)
    dhh = 2.0 * np.sqrt(c1p * c2p) * np.sin(np.radians(dh) / 2.0)

    l_bar = 0.5 * (l1 + l2)
    cp_bar = 0.5 * (c1p + c2p)
    h_sum = h1p + h2p
    h_diff = np.abs(h1p - h2p)
    h_bar = np.where(
        h_diff <= 180.0,
        0.5 * h_sum,
        np.where(h_sum < 360.0, 0.5 * (h_sum + 360.0), 0.5 * (h_sum - 360.0)),
    )
    h_bar = np.where(c1p * c2p == 0.0, h_sum, h_bar)

    t = (
        1.0
        - 0.17 * np.cos(np.radians(h_bar - 30.0))
        + 0.24 * np.cos(np.radians(2.0 * h_bar))
        + 0.32 * np.cos(np.radians(3.0 * h_bar + 6.0))
        - 0.20 * np.cos(np.radians(4.0 * h_bar - 63.0))
    )
    d_theta = 30.0 * np.exp(-(((h_bar - 275.0) / 25.0) ** 2))
    r_c = 2.0 * np.sqrt(cp_bar**7 / (cp_bar**7 + 25.0**7))
    s_l = 1.0 + 0.015 * (l_bar - 50.0) ** 2 / np.sqrt(20.0 + (l_bar - 50.0) ** 2)
    s_c = 1.0 + 0.045 * cp_bar
    s_h = 1.0 + 0.015 * cp_bar * t
    r_t = -np.sin(np.radians(2.0 * d_theta)) * r_c

    return np.sqrt(
        (dl / s_l) ** 2
        + (dc / s_c) ** 2
        + (dhh / s_h) ** 2
        + r_t * (dc / s_c) * (dhh / s_h)
    )


def delta_e_2000(a: RgbImage, b: RgbImage) -> float:
    """Mean per-pixel CIEDE2000 between the two images in CIE Lab."""
    _check_sizes(a, b)
    lab_a = rgb_to_lab(a).transpose(1, 2, 0)
    lab_b = rgb_to_lab(b).transpose(1, 2, 0)
    return float(np.mean(ciede2000_lab(lab_a, lab_b)))


@dataclass(frozen=True)
class MetricReport:
    names: tuple
    psnr_values: tuple
    ssim_values: tuple
    delta_e_values: tuple

    @property
    def count(self) -> int:
        return len(self.names)

    def _mean(self, values) -> float:
        finite = [v for v in values if math.isfinite(v)]
        return float(np.mean(finite)) if finite else math.inf

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean_psnr": self._mean(self.psnr_values),
            "mean_ssim": self._mean(self.ssim_values),
            "mean_delta_e": self._mean(self.delta_e_values),
            "per_image": [
                {
                    "name": n,
                    "psnr": p if math.isfinite(p) else "inf",
                    "ssim": s,
                    "delta_e": d,
                }
                for n, p, s, d in zip(
                    self.names, self.psnr_values, self.ssim_values, self.delta_e_values
                )
            ],
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["name", "psnr", "ssim", "delta_e"])
            for n, p, s, d in zip(
                self.names, self.psnr_values, self.ssim_values, self.delta_e_values
            ):
                writer.writerow([n, p, s, d])


def evaluate_pairs(pairs) -> MetricReport:
    """Score (name, prediction, reference) triples with all three metrics."""
    names, ps, ss, ds = [], [], [], []
    for name, pred, ref in pairs:
        names.append(name)
        ps.append(psnr(pred, ref))
        ss.append(ssim(pred, ref))
        ds.append(delta_e_2000(pred, ref))
    return MetricReport(tuple(names), tuple(ps), tuple(ss), tuple(ds))
