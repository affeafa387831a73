"""Shared fixtures and oracles for the test suite."""

import json
from pathlib import Path

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from rawpair.imgcore import EmbeddingSet, RgbImage, encode_raw, RawPatch, write_embeddings, write_png


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def smooth_image(shape, rng, sigma=3.0, lo=0.05, hi=0.95) -> RgbImage:
    """Natural-statistics test image: smoothed white noise, rescaled."""
    planes = np.stack(
        [gaussian_filter(rng.normal(size=shape), sigma) for _ in range(3)]
    )
    planes -= planes.min()
    span = planes.max()
    if span > 0:
        planes /= span
    return RgbImage((lo + (hi - lo) * planes).astype(np.float32))


def directional_fd(loss_fn, x: np.ndarray, grad: np.ndarray, direction: np.ndarray,
                   step: float = 1e-4):
    """Central finite difference of loss_fn along `direction` at x, compared
    with the analytic directional derivative <grad, direction>.

    Returns (numeric, analytic)."""
    fp = loss_fn(x + step * direction)
    fm = loss_fn(x - step * direction)
    return (fp - fm) / (2.0 * step), float(np.sum(grad * direction))


def rel_err(numeric: float, analytic: float) -> float:
    scale = max(abs(numeric), abs(analytic), 1e-12)
    return abs(numeric - analytic) / scale


def loss_active_signature(planes: np.ndarray, target: np.ndarray,
                          bins_y: int = 64, bins_uv: int = 32):
    """Discrete active-set signature of total_loss at `planes`.

    Two evaluation points with equal signatures lie on the same smooth piece
    of the piecewise-smooth objective (same histogram cells, TV signs, and
    moment signs), so a central difference across them sees no kink.
    """
    from rawpair.objective import _yuv64, moments

    y, u, v = _yuv64(planes)

    def cell(vals, bins, lo, hi):
        delta = (hi - lo) / bins
        pos = np.clip((vals - (lo + 0.5 * delta)) / delta, 0.0, bins - 1.0)
        return np.floor(pos).astype(np.int64)

    mp = moments(planes)
    mt = moments(target)
    return (
        cell(y, bins_y, 0.0, 1.0).tobytes(),
        cell(u, bins_uv, -0.5, 0.5).tobytes(),
        cell(v, bins_uv, -0.5, 0.5).tobytes(),
        np.sign(np.diff(planes, axis=1)).tobytes(),
        np.sign(np.diff(planes, axis=2)).tobytes(),
        np.sign(mp.mean - mt.mean).tobytes(),
        np.sign(mp.std - mt.std).tobytes(),
    )


def diverse_image(shape, rng, sigma=2.0):
    """Smooth field with a random palette per channel; keeps channel means
    spread out so affine color maps are identifiable from statistics."""
    planes = []
    for _ in range(3):
        f = gaussian_filter(rng.normal(size=shape), sigma)
        f -= f.min()
        if f.max() > 0:
            f /= f.max()
        lo = rng.uniform(0.05, 0.5)
        hi = lo + rng.uniform(0.15, 0.45)
        planes.append(lo + (hi - lo) * f)
    return np.stack(planes).astype(np.float32)


RECOVERY_MATRIX = np.array(
    [[0.90, 0.05, 0.00], [0.00, 1.05, -0.05], [0.05, 0.00, 0.85]]
)
RECOVERY_BIAS = np.array([0.03, -0.02, 0.04])


def ccm_recovery_fixture(seed, n=96, size=16):
    """Self-paired dataset whose targets are a known affine color transform."""
    from rawpair.otmatch import PairGraph

    rng = np.random.default_rng(seed)
    sources, targets, entries = {}, {}, {}
    for i in range(n):
        x = diverse_image((size, size), rng)
        y = np.einsum("ij,jhw->ihw", RECOVERY_MATRIX, x.astype(np.float64))
        y = np.clip(y + RECOVERY_BIAS[:, None, None], 0.0, 1.0)
        sources[f"s{i:03d}"] = RgbImage(x)
        targets[f"t{i:03d}"] = RgbImage(y.astype(np.float32))
        entries[f"s{i:03d}"] = ((f"t{i:03d}", 1.0),)
    return sources, targets, PairGraph(entries)


def recovery_train_config(seed=0):
    from rawpair.mapper import StageConfig, TrainConfig
    from rawpair.objective import LossWeights

    return TrainConfig(
        stage1=StageConfig(epochs=7, lr=8e-3, weights=LossWeights()),
        stage2=StageConfig(epochs=3, lr=1e-3, weights=LossWeights.stage2()),
        batch_size=24,
        seed=seed,
    )


def lab_reference(r, g, b):
    """Scalar brute-force sRGB -> Lab oracle, written independently."""

    def eotf(c):
        return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4

    rl, gl, bl = eotf(r), eotf(g), eotf(b)
    x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl
    y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl
    z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl

    def f(t):
        return t ** (1.0 / 3.0) if t > (6.0 / 29.0) ** 3 else t / (3 * (6.0 / 29.0) ** 2) + 4.0 / 29.0

    fx, fy, fz = f(x / 0.95047), f(y / 1.0), f(z / 1.08883)
    return 116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)


def ssim_oracle(a: RgbImage, b: RgbImage) -> float:
    """Naive sliding-window SSIM on luma, written independently."""
    from rawpair.objective import _yuv64
    from rawpair.quality import _gaussian_kernel

    x = _yuv64(a.planes.astype(np.float64))[0]
    y = _yuv64(b.planes.astype(np.float64))[0]
    k = _gaussian_kernel(11, 1.5)
    c1, c2 = 0.01**2, 0.03**2
    h, w = x.shape
    values = []
    for i in range(h - 10):
        for j in range(w - 10):
            wx = x[i : i + 11, j : j + 11]
            wy = y[i : i + 11, j : j + 11]
            mx = float((k * wx).sum())
            my = float((k * wy).sum())
            vx = float((k * wx * wx).sum()) - mx * mx
            vy = float((k * wy * wy).sum()) - my * my
            cov = float((k * wx * wy).sum()) - mx * my
            values.append(
                ((2 * mx * my + c1) * (2 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2))
            )
    return float(np.mean(values))


def mosaic_pack(linear: np.ndarray) -> RawPatch:
    """Inverse of demosaic: sample an RGGB mosaic from a (3, 2H, 2W) linear
    image and pack it into 10-bit planes."""
    r = linear[0, 0::2, 0::2]
    gr = linear[1, 0::2, 1::2]
    gb = linear[1, 1::2, 0::2]
    b = linear[2, 1::2, 1::2]
    samples = np.round(np.stack([r, gr, gb, b], axis=-1) * 1023.0)
    return RawPatch(samples.astype(np.uint16))


def build_synthetic_run(
    root: Path,
    n_images: int = 4,
    grid=(2, 2),
    patch: int = 16,
    seed: int = 0,
    matrix=None,
    bias=None,
    palette=None,
):
    """Synthetic unpaired dataset: RAW patch streams whose targets are a known
    affine color transform of the preprocessed sources.

    Writes source_raw/, target_rgb/, gt_rgb/ and EMB1 embedding files under
    `root`; returns a dict of the written paths. `palette(k, rng)` may remap
    each scene's channel ranges (used for the two-cluster experiment).
    """
    rng = np.random.default_rng(seed)
    matrix = np.eye(3) if matrix is None else np.asarray(matrix)
    bias = np.zeros(3) if bias is None else np.asarray(bias)
    rows, cols = grid
    dirs = {}
    for name in ("source_raw", "target_rgb", "gt_rgb"):
        path = Path(root) / name
        path.mkdir(parents=True, exist_ok=True)
        dirs[name] = path
    emb_dir = Path(root) / "embeddings"
    emb_dir.mkdir(exist_ok=True)

    src_img_names, src_img_vecs = [], []
    tgt_img_names, tgt_img_vecs = [], []
    src_patch_names, src_patch_vecs = [], []
    tgt_patch_names, tgt_patch_vecs = [], []
    for k in range(n_images):
        scene = smooth_image((rows * patch, cols * patch), rng, sigma=6.0, lo=0.1, hi=0.9)
        linear = scene.planes.astype(np.float64)
        if palette is not None:
            linear = palette(k, linear, rng)
        pseudo_rgb = np.clip(linear, 0.0, 1.0) ** (1.0 / 2.2)
        target = np.clip(
            np.einsum("ij,jhw->ihw", matrix, pseudo_rgb) + bias[:, None, None], 0.0, 1.0
        )

        latent = rng.normal(size=8)
        src_img_names.append(f"img{k}")
        src_img_vecs.append(latent + 0.03 * rng.normal(size=8))
        tgt_img_names.append(f"tgt{k}")
        tgt_img_vecs.append(latent + 0.03 * rng.normal(size=8))

        for idx in range(rows * cols):
            r, c = divmod(idx, cols)
            sl = np.s_[:, r * patch : (r + 1) * patch, c * patch : (c + 1) * patch]
            stem = f"img{k}_{idx:02d}"
            tstem = f"tgt{k}_{idx:02d}"
            raw = mosaic_pack(linear[sl])
            (dirs["source_raw"] / f"{stem}.raw").write_bytes(encode_raw(raw))
            with open(dirs["source_raw"] / f"{stem}.json", "w") as fh:
                json.dump({"height": raw.height, "width": raw.width}, fh)
            write_png(RgbImage(target[sl].astype(np.float32)), dirs["target_rgb"] / f"{tstem}.png")
            write_png(RgbImage(target[sl].astype(np.float32)), dirs["gt_rgb"] / f"{stem}.png")

            p_latent = rng.normal(size=8)
            src_patch_names.append(stem)
            src_patch_vecs.append(p_latent + 0.03 * rng.normal(size=8))
            tgt_patch_names.append(tstem)
            tgt_patch_vecs.append(p_latent + 0.03 * rng.normal(size=8))

    paths = {
        "source_image_embeddings": emb_dir / "source_images.emb",
        "target_image_embeddings": emb_dir / "target_images.emb",
        "source_patch_embeddings": emb_dir / "source_patches.emb",
        "target_patch_embeddings": emb_dir / "target_patches.emb",
    }
    write_embeddings(
        EmbeddingSet(tuple(src_img_names), np.stack(src_img_vecs).astype(np.float32)),
        paths["source_image_embeddings"],
    )
    write_embeddings(
        EmbeddingSet(tuple(tgt_img_names), np.stack(tgt_img_vecs).astype(np.float32)),
        paths["target_image_embeddings"],
    )
    write_embeddings(
        EmbeddingSet(tuple(src_patch_names), np.stack(src_patch_vecs).astype(np.float32)),
        paths["source_patch_embeddings"],
    )
    write_embeddings(
        EmbeddingSet(tuple(tgt_patch_names), np.stack(tgt_patch_vecs).astype(np.float32)),
        paths["target_patch_embeddings"],
    )
    return {**dirs, **{k: v for k, v in paths.items()}}


def head_active_signature(head, x: np.ndarray):
    """Active-set signature of a head's own kinks (ReLU, clamp, lattice cell)."""
    from rawpair.mapper import CcmHead, Lut3dHead, ResidualCnnHead

    out, cache = head.forward_planes(x)
    if isinstance(head, Lut3dHead):
        low, _, _ = cache
        sig = tuple(idx.tobytes() for idx in low)
    elif isinstance(head, ResidualCnnHead):
        _, pre1, _, _, _, mask = cache
        sig = ((pre1 > 0).tobytes(), mask.tobytes())
    elif isinstance(head, CcmHead):
        _, mask = cache
        sig = (mask.tobytes(),)
    else:
        sig = ()
    return out, sig

