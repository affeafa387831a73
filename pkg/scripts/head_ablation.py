#!/usr/bin/env python3
"""Compare color-mapping heads (1x1 CCM vs 3D LUT vs residual CNN) on the
synthetic affine-recovery task: same pseudo-pairs, same schedule, report
PSNR / SSIM / CIEDE2000 against the true targets per head.
"""

import argparse
import time

import numpy as np
from scipy.ndimage import gaussian_filter

from rawpair import mapper, quality
from rawpair.imgcore import RgbImage
from rawpair.objective import LossWeights
from rawpair.otmatch import PairGraph

TRANSFORM = np.array([[0.90, 0.05, 0.00], [0.00, 1.05, -0.05], [0.05, 0.00, 0.85]])
OFFSET = np.array([0.03, -0.02, 0.04])


def diverse_image(shape, rng, sigma=2.0):
    planes = []
    for _ in range(3):
        f = gaussian_filter(rng.normal(size=shape), sigma)
        f -= f.min()
        if f.max() > 0:
            f /= f.max()
        lo = rng.uniform(0.05, 0.5)
        planes.append(lo + (lo + rng.uniform(0.15, 0.45) - lo) * f)
    return np.stack(planes).astype(np.float32)


def make_data(seed, n, size):
    rng = np.random.default_rng(seed)
    sources, targets, entries = {}, {}, {}
    for i in range(n):
        x = diverse_image((size, size), rng)
        y = np.clip(
            np.einsum("ij,jhw->ihw", TRANSFORM, x.astype(np.float64)) + OFFSET[:, None, None],
            0, 1,
        ).astype(np.float32)
        sources[f"s{i:03d}"] = RgbImage(x)
        targets[f"t{i:03d}"] = RgbImage(y)
        entries[f"s{i:03d}"] = ((f"t{i:03d}", 1.0),)
    return sources, targets, PairGraph(entries)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--patches", type=int, default=96)
    parser.add_argument("--size", type=int, default=16)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    sources, targets, graph = make_data(args.seed, args.patches, args.size)
    # global heads tolerate a much larger step than the CNN
    heads = {
        "1x1 CCM": (mapper.CcmHead(), 8e-3, 1e-3),
        "3D LUT (L=9)": (mapper.Lut3dHead(9), 8e-3, 1e-3),
        "residual CNN": (mapper.ResidualCnnHead(seed=args.seed), 1e-3, 2e-4),
    }
    print(f"{'head':<14} {'params':>7} {'PSNR':>7} {'SSIM':>7} {'dE2000':>7} {'time':>6}")
    for name, (head, lr1, lr2) in heads.items():
        cfg = mapper.TrainConfig(
            stage1=mapper.StageConfig(epochs=7, lr=lr1, weights=LossWeights()),
            stage2=mapper.StageConfig(epochs=3, lr=lr2, weights=LossWeights.stage2()),
            batch_size=24, seed=args.seed,
        )
        start = time.time()
        mapper.train(head, graph, sources, targets, cfg)
        elapsed = time.time() - start
        preds = {s: mapper.forward(head, sources[s]) for s in sources}
        report = quality.evaluate_pairs(
            [(s, preds[s], targets["t" + s[1:]]) for s in sources]
        )
        summary = report.to_dict()
        print(
            f"{name:<14} {head.param_count():>7} {summary['mean_psnr']:>7.2f} "
            f"{summary['mean_ssim']:>7.4f} {summary['mean_delta_e']:>7.3f} {elapsed:>5.1f}s"
        )


if __name__ == "__main__":
    main()
