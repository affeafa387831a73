"""Grid-layout inference and assembly for ordered patch streams.

Challenge data ships full images as row-major patch sequences with an
unknown (rows, columns) grid. The grid is recovered by scoring every
divisor layout with a seam-consistency cost (mean absolute mismatch of
b-pixel border strips across adjacent patches) and taking the argmin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imgcore import RawPatch, RgbImage

DEFAULT_BORDER = 4


@dataclass(frozen=True)
class LayoutCandidate:
    rows: int
    cols: int
    score: float


def score_map(patch) -> np.ndarray:
    """Scalar per-pixel map used for seam comparison.

    RAW patches use the green proxy (G_r + G_b) / 2 on normalized planes;
    RGB images use the channel mean.
    """
    if isinstance(patch, RawPatch):
        s = patch.samples.astype(np.float64) / 1023.0
        return 0.5 * (s[:, :, 1] + s[:, :, 2])
    if isinstance(patch, RgbImage):
        return patch.planes.astype(np.float64).mean(axis=0)
    arr = np.asarray(patch, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"score map input must be 2-D, got {arr.shape}")
    return arr


def seam_score(maps, rows: int, cols: int, border: int = DEFAULT_BORDER) -> float:
    """Mean seam cost of laying `maps` out row-major on a rows x cols grid.

    Horizontal cost compares the right `border` columns of (r, c) against
    the left `border` columns of (r, c+1); vertical cost is the analogue
    along rows. A single-patch layout has no seams and scores 0.
    """
    grid = np.asarray([score_map(m) for m in maps], dtype=np.float64)
    n = grid.shape[0]
    if rows * cols != n:
        raise ValueError(f"{rows}x{cols} layout cannot hold {n} patches")
    h, w = grid.shape[1:]
    if border > min(h, w):
        raise ValueError(f"border {border} exceeds patch size {h}x{w}")
    n_seams = rows * (cols - 1) + (rows - 1) * cols
    if n_seams == 0:
        return 0.0
    grid = grid.reshape(rows, cols, h, w)
    total = 0.0
    if cols > 1:
        hor = np.abs(grid[:, :-1, :, w - border :] - grid[:, 1:, :, :border])
        total += hor.mean(axis=(2, 3)).sum()
    if rows > 1:
        ver = np.abs(grid[:-1, :, h - border :, :] - grid[1:, :, :border, :])
        total += ver.mean(axis=(2, 3)).sum()
    return float(total / n_seams)


def _divisor_layouts(n: int):
    for r in range(1, n + 1):
        if n % r == 0:
            yield r, n // r


def score_layouts(maps, n: int, border: int = DEFAULT_BORDER) -> list:
    """All divisor layouts with their seam scores, in (R, C) order."""
    maps = [score_map(m) for m in maps]
    if len(maps) != n:
        raise ValueError(f"expected {n} maps, got {len(maps)}")
    return [
        LayoutCandidate(r, c, seam_score(maps, r, c, border))
        for r, c in _divisor_layouts(n)
    ]


def infer_layout(maps, n: int, border: int = DEFAULT_BORDER) -> LayoutCandidate:
    """Argmin-score layout; ties prefer the most square grid, then smaller R."""
    candidates = score_layouts(maps, n, border)
    return min(candidates, key=lambda lc: (lc.score, abs(lc.rows - lc.cols), lc.rows))


def assemble(patches, rows: int, cols: int) -> RgbImage:
    """Row-major concatenation of equally sized patches, no blending."""
    if len(patches) != rows * cols:
        raise ValueError(f"{rows}x{cols} layout cannot hold {len(patches)} patches")
    arrays = [p.planes if isinstance(p, RgbImage) else np.asarray(p) for p in patches]
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise ValueError("patch size mismatch in assemble")
    rows_out = [
        np.concatenate(arrays[r * cols : (r + 1) * cols], axis=2) for r in range(rows)
    ]
    return RgbImage(np.concatenate(rows_out, axis=1))


def cut(img: RgbImage, rows: int, cols: int) -> list:
    """Inverse of assemble: split into a row-major list of patches."""
    h, w = img.height, img.width
    if h % rows or w % cols:
        raise ValueError(f"image {h}x{w} does not divide into {rows}x{cols}")
    ph, pw = h // rows, w // cols
    return [
        RgbImage(img.planes[:, r * ph : (r + 1) * ph, c * pw : (c + 1) * pw])
        for r in range(rows)
        for c in range(cols)
    ]
