#!/usr/bin/env python3
"""Generate a synthetic unpaired RAW/RGB dataset plus a ready-to-run config.

Creates RAW patch streams (packed RGGB, 10-bit), target RGB patches obtained
from a hidden affine color transform, synthetic embeddings encoding the
matched semantics, and ground-truth targets for evaluation. Afterwards:

    python scripts/make_synthetic_dataset.py --out /tmp/demo
    rawpair run --config /tmp/demo/run.toml
"""

import argparse
import json
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from rawpair.imgcore import EmbeddingSet, RawPatch, RgbImage, encode_raw, write_embeddings, write_png

TRANSFORM = np.array([[0.92, 0.06, 0.00], [0.00, 1.02, -0.04], [0.04, 0.00, 0.88]])
OFFSET = np.array([0.02, -0.01, 0.03])


def smooth_scene(shape, rng, sigma=6.0):
    planes = np.stack([gaussian_filter(rng.normal(size=shape), sigma) for _ in range(3)])
    planes -= planes.min()
    if planes.max() > 0:
        planes /= planes.max()
    return 0.1 + 0.8 * planes


def mosaic_pack(linear):
    r = linear[0, 0::2, 0::2]
    gr = linear[1, 0::2, 1::2]
    gb = linear[1, 1::2, 0::2]
    b = linear[2, 1::2, 1::2]
    return RawPatch(np.round(np.stack([r, gr, gb, b], axis=-1) * 1023).astype(np.uint16))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--images", type=int, default=6)
    parser.add_argument("--grid", type=int, nargs=2, default=(2, 3))
    parser.add_argument("--patch", type=int, default=32, help="RGB patch side (even)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    root = Path(args.out)
    for sub in ("source_raw", "target_rgb", "gt_rgb", "embeddings"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    rows, cols = args.grid
    sets = {k: ([], []) for k in ("si", "ti", "sp", "tp")}
    for k in range(args.images):
        scene = smooth_scene((rows * args.patch, cols * args.patch), rng)
        pseudo = np.clip(scene, 0, 1) ** (1 / 2.2)
        target = np.clip(np.einsum("ij,jhw->ihw", TRANSFORM, pseudo) + OFFSET[:, None, None], 0, 1)
        latent = rng.normal(size=8)
        for key, name in (("si", f"img{k}"), ("ti", f"tgt{k}")):
            sets[key][0].append(name)
            sets[key][1].append(latent + 0.03 * rng.normal(size=8))
        for idx in range(rows * cols):
            r, c = divmod(idx, cols)
            sl = np.s_[:, r * args.patch : (r + 1) * args.patch, c * args.patch : (c + 1) * args.patch]
            raw = mosaic_pack(scene[sl])
            stem, tstem = f"img{k}_{idx:02d}", f"tgt{k}_{idx:02d}"
            (root / "source_raw" / f"{stem}.raw").write_bytes(encode_raw(raw))
            with open(root / "source_raw" / f"{stem}.json", "w") as fh:
                json.dump({"height": raw.height, "width": raw.width}, fh)
            write_png(RgbImage(target[sl].astype(np.float32)), root / "target_rgb" / f"{tstem}.png")
            write_png(RgbImage(target[sl].astype(np.float32)), root / "gt_rgb" / f"{stem}.png")
            p_latent = rng.normal(size=8)
            sets["sp"][0].append(stem)
            sets["sp"][1].append(p_latent + 0.03 * rng.normal(size=8))
            sets["tp"][0].append(tstem)
            sets["tp"][1].append(p_latent + 0.03 * rng.normal(size=8))

    emb_files = {
        "si": "source_images.emb",
        "ti": "target_images.emb",
        "sp": "source_patches.emb",
        "tp": "target_patches.emb",
    }
    for key, fname in emb_files.items():
        names, vecs = sets[key]
        write_embeddings(
            EmbeddingSet(tuple(names), np.stack(vecs).astype(np.float32)),
            root / "embeddings" / fname,
        )

    config = f"""[paths]
source_raw_dir = "{root / 'source_raw'}"
target_rgb_dir = "{root / 'target_rgb'}"
output_dir = "{root / 'run'}"
source_image_embeddings = "{root / 'embeddings' / 'source_images.emb'}"
target_image_embeddings = "{root / 'embeddings' / 'target_images.emb'}"
source_patch_embeddings = "{root / 'embeddings' / 'source_patches.emb'}"
target_patch_embeddings = "{root / 'embeddings' / 'target_patches.emb'}"
eval_gt_dir = "{root / 'gt_rgb'}"

[raw]
raw_height = {args.patch // 2}
raw_width = {args.patch // 2}

[matching]
top_images = 3
top_candidates = 4

[training]
head = "ccm"
stage1_epochs = 8
stage1_lr = 0.01
stage2_epochs = 2
stage2_lr = 0.002
seed = {args.seed}
"""
    (root / "run.toml").write_text(config)
    n_patches = args.images * rows * cols
    print(f"wrote {args.images} scenes / {n_patches} patches under {root}")
    print(f"next: rawpair run --config {root / 'run.toml'}")


if __name__ == "__main__":
    main()
