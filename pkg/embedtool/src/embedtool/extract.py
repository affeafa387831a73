"""Descriptor and feature-map extraction.

The image descriptor concatenates the L2-normalized [CLS] token with the
mean of the L2-normalized patch tokens from the final transformer block,
giving 2 x embed_dim values (768 for ViT-S/14). Feature maps are raw
activations at named VGG19 relu taps.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .containers import write_embeddings, write_feature_maps
from .models import IMAGENET_MEAN, IMAGENET_STD, VGG19_TAPS, load_dinov2, load_vgg19

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class ExtractJob:
    """One extraction run.

    taps=None extracts DINOv2 descriptors into an EMB1 container; any tuple
    (possibly empty) switches to VGG19 feature maps in an FMP1 container.
    """

    input_dir: str
    output_path: str
    model_id: str = "dinov2-vits14"
    weights: str = ""
    taps: tuple = None
    batch_size: int = 8
    resize: int = 224
    seed: int = 0
    device: str = "cpu"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.resize % 14 != 0:
            raise ValueError("resize must be a multiple of the 14-px patch size")


def list_images(directory) -> list:
    files = [p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES]
    return sorted(files, key=lambda p: p.stem)


def load_image_tensor(path, resize: int = 224) -> torch.Tensor:
    """(3, resize, resize) float tensor, ImageNet-normalized."""
    with Image.open(path) as im:
        im = im.convert("RGB").resize((resize, resize), Image.BILINEAR)
    arr = np.asarray(im, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(IMAGENET_MEAN, np.float32)) / np.asarray(IMAGENET_STD, np.float32)
    return torch.from_numpy(arr.transpose(2, 0, 1))


def image_descriptor(tokens: torch.Tensor) -> np.ndarray:
    """Descriptor from a (1 + n_patches, dim) token sequence.

    The [CLS] token is L2-normalized; each patch token is L2-normalized
    before averaging; the two halves are concatenated.
    """
    cls = torch.nn.functional.normalize(tokens[0], dim=0)
    patches = torch.nn.functional.normalize(tokens[1:], dim=1).mean(dim=0)
    return torch.cat([cls, patches]).cpu().numpy().astype(np.float32)


def extract_image_descriptors(job: ExtractJob, files=None):
    """Run the DINOv2 backbone over a directory; yields (name, descriptor)."""
    model, dim, source = load_dinov2(job.model_id, job.weights, job.seed, job.device)
    files = list_images(job.input_dir) if files is None else files
    records = []
    with torch.no_grad():
        for start in range(0, len(files), job.batch_size):
            chunk = files[start : start + job.batch_size]
            batch = torch.stack([load_image_tensor(p, job.resize) for p in chunk])
            tokens = model(batch.to(job.device)).last_hidden_state
            for name, seq in zip((p.stem for p in chunk), tokens):
                records.append((name, image_descriptor(seq)))
    return records, 2 * dim, source


def extract_feature_maps(job: ExtractJob, files=None):
    """Run VGG19 and capture activations at the configured relu taps.

    An empty tap tuple yields no records (an empty container downstream).
    """
    taps = tuple(job.taps or ())
    unknown = [t for t in taps if t not in VGG19_TAPS]
    if unknown:
        raise ValueError(f"unknown tap names {unknown}; choose from {sorted(VGG19_TAPS)}")
    if not taps:
        return [], "none"
    features, source = load_vgg19(job.weights, job.seed, job.device)
    tap_index = {VGG19_TAPS[t]: (t, layer_id) for layer_id, t in enumerate(taps, start=1)}
    last_needed = max(VGG19_TAPS[t] for t in taps)
    files = list_images(job.input_dir) if files is None else files
    records = []
    with torch.no_grad():
        for path in files:
            x = load_image_tensor(path, job.resize).unsqueeze(0).to(job.device)
            for idx, module in enumerate(features):
                x = module(x)
                if idx in tap_index:
                    _, layer_id = tap_index[idx]
                    records.append((path.stem, layer_id, x[0].cpu().numpy()))
                if idx >= last_needed:
                    break
    return records, source


def run_job(job: ExtractJob) -> dict:
    """Extract and write the container; returns a small summary dict."""
    files = list_images(job.input_dir)
    if not files:
        raise ValueError(f"no images found in {job.input_dir}")
    if job.taps is not None:
        records, source = extract_feature_maps(job, files)
        write_feature_maps(records, job.output_path)
        return {
            "kind": "feature-maps",
            "records": len(records),
            "taps": list(job.taps),
            "weights": source,
        }
    records, dim, source = extract_image_descriptors(job, files)
    write_embeddings(records, job.output_path)
    return {"kind": "descriptors", "records": len(records), "dim": dim, "weights": source}
