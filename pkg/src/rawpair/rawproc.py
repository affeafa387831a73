"""Fixed RAW pre-processing: normalization, bilinear demosaic, denoise, gamma.

Turns a packed RGGB patch into the pseudo-RGB image the color mappers
consume. All stages are deterministic pure functions; the learned
demosaic/denoise networks of production ISPs are deliberately replaced by
their classical counterparts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve, uniform_filter

from .imgcore import RawPatch, RgbImage

# Classic bilinear demosaic stencils. Active taps always sum to 4 in the
# interior; at borders the mask convolution renormalizes over the taps that
# exist (replicate padding cannot be used verbatim on a CFA because it
# duplicates a sample onto the opposite color phase).
_KERNEL_G = np.array([[0.0, 1.0, 0.0], [1.0, 4.0, 1.0], [0.0, 1.0, 0.0]])
_KERNEL_RB = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]])


@dataclass(frozen=True)
class RawProcConfig:
    black_level: int = 0
    white_level: int = 1023
    wb_gains: tuple = (1.0, 1.0, 1.0, 1.0)
    gamma: float = 2.2
    denoise: str = "off"  # "off" | "box3"

    def __post_init__(self):
        if self.black_level >= self.white_level:
            raise ValueError("black_level must be below white_level")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if len(self.wb_gains) != 4 or any(g <= 0 for g in self.wb_gains):
            raise ValueError("wb_gains must be 4 positive floats")
        if self.denoise not in ("off", "box3"):
            raise ValueError(f"unknown denoise mode {self.denoise!r}")


def normalize(raw: RawPatch, cfg: RawProcConfig = RawProcConfig()) -> np.ndarray:
    """Black/white level normalization plus white-balance gains.

    Returns an (H, W, 4) float32 array: clamp((s - black) / (white - black),
    0, 1) * gain_c, clamped again to [0, 1].
    """
    s = raw.samples.astype(np.float64)
    span = float(cfg.white_level - cfg.black_level)
    v = np.clip((s - cfg.black_level) / span, 0.0, 1.0)
    v = v * np.asarray(cfg.wb_gains, dtype=np.float64)
    return np.clip(v, 0.0, 1.0).astype(np.float32)


def demosaic(norm: np.ndarray) -> RgbImage:
    """Bilinear demosaic of a normalized 4-plane patch to a 2Hx2W RgbImage.

    The planes are unpacked to an RGGB mosaic (R at even/even, G_r at
    even/odd, G_b at odd/even, B at odd/odd), then each output channel is
    interpolated with the standard 3x3 bilinear stencils; border pixels
    average over the in-bounds same-color neighbors.
    """
    h, w = norm.shape[:2]
    mosaic = np.zeros((2 * h, 2 * w), dtype=np.float64)
    mosaic[0::2, 0::2] = norm[:, :, 0]
    mosaic[0::2, 1::2] = norm[:, :, 1]
    mosaic[1::2, 0::2] = norm[:, :, 2]
    mosaic[1::2, 1::2] = norm[:, :, 3]

    masks = np.zeros((3, 2 * h, 2 * w), dtype=np.float64)
    masks[0, 0::2, 0::2] = 1.0  # R
    masks[1, 0::2, 1::2] = 1.0  # G (quincunx)
    masks[1, 1::2, 0::2] = 1.0
    masks[2, 1::2, 1::2] = 1.0  # B

    out = np.empty((3, 2 * h, 2 * w), dtype=np.float64)
    for c, kernel in enumerate([_KERNEL_RB, _KERNEL_G, _KERNEL_RB]):
        num = convolve(mosaic * masks[c], kernel, mode="constant", cval=0.0)
        den = convolve(masks[c], kernel, mode="constant", cval=0.0)
        out[c] = num / den
    return RgbImage(np.clip(out, 0.0, 1.0).astype(np.float32))


def box_denoise(img: RgbImage) -> RgbImage:
    """3x3 box filter per channel, replicate borders."""
    smoothed = np.stack(
        [uniform_filter(p, size=3, mode="nearest") for p in img.planes.astype(np.float64)]
    )
    return RgbImage(np.clip(smoothed, 0.0, 1.0).astype(np.float32))


def gamma_encode(img: RgbImage, gamma: float = 2.2) -> RgbImage:
    """Elementwise out = in ** (1 / gamma); gamma=1 is the identity."""
    if gamma == 1.0:
        return img
    out = np.power(img.planes.astype(np.float64), 1.0 / gamma)
    return RgbImage(np.clip(out, 0.0, 1.0).astype(np.float32))


def preprocess(raw: RawPatch, cfg: RawProcConfig = RawProcConfig()) -> RgbImage:
    """normalize -> demosaic -> optional box denoise -> gamma encode."""
    img = demosaic(normalize(raw, cfg))
    if cfg.denoise == "box3":
        img = box_denoise(img)
    return gamma_encode(img, cfg.gamma)
