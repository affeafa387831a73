"""Backbone construction: DINOv2 ViT variants and VGG19 tap points.

Weight resolution order: an explicit local path, then the hub (when
reachable), then a deterministic seeded random initialization. Random
weights keep the tool fully functional offline - descriptor shapes,
normalization, and determinism are unchanged - but the embeddings are only
semantically meaningful with real weights.
"""

from __future__ import annotations

from pathlib import Path

import torch
from torchvision.models import vgg19
from transformers import Dinov2Config, Dinov2Model

DINOV2_CONFIGS = {
    "dinov2-vits14": dict(hidden_size=384, num_hidden_layers=12, num_attention_heads=6),
    "dinov2-vitb14": dict(hidden_size=768, num_hidden_layers=12, num_attention_heads=12),
}
DINOV2_HUB_IDS = {
    "dinov2-vits14": "facebook/dinov2-small",
    "dinov2-vitb14": "facebook/dinov2-base",
}

# VGG19 feature-module indices of the relu taps usable for Gram statistics.
VGG19_TAPS = {
    "relu1_1": 1,
    "relu1_2": 3,
    "relu2_1": 6,
    "relu2_2": 8,
    "relu3_1": 11,
    "relu4_1": 20,
    "relu5_1": 29,
}
DEFAULT_TAPS = ("relu1_1", "relu2_1", "relu3_1", "relu4_1")

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def load_dinov2(model_id: str = "dinov2-vits14", weights: str = "", seed: int = 0,
                device: str = "cpu"):
    """Build a DINOv2 backbone; returns (model, embed_dim, weight_source)."""
    if model_id not in DINOV2_CONFIGS:
        raise ValueError(f"unknown model id {model_id!r}; choose from {sorted(DINOV2_CONFIGS)}")
    source = "random-init"
    if weights:
        path = Path(weights)
        if path.is_dir():
            model = Dinov2Model.from_pretrained(path)
            source = str(path)
        else:
            model = _fresh_dinov2(model_id, seed)
            state = torch.load(path, map_location="cpu")
            model.load_state_dict(state)
            source = str(path)
    else:
        try:
            model = Dinov2Model.from_pretrained(DINOV2_HUB_IDS[model_id])
            source = DINOV2_HUB_IDS[model_id]
        except Exception:
            model = _fresh_dinov2(model_id, seed)
    model.eval()
    model.to(device)
    return model, model.config.hidden_size, source


def _fresh_dinov2(model_id: str, seed: int) -> Dinov2Model:
    cfg = Dinov2Config(patch_size=14, image_size=224, **DINOV2_CONFIGS[model_id])
    torch.manual_seed(seed)
    return Dinov2Model(cfg)


def load_vgg19(weights: str = "", seed: int = 0, device: str = "cpu"):
    """Build the VGG19 feature stack; returns (features, weight_source)."""
    source = "random-init"
    if weights:
        model = vgg19(weights=None)
        model.load_state_dict(torch.load(weights, map_location="cpu"))
        source = weights
    else:
        try:
            from torchvision.models import VGG19_Weights

            model = vgg19(weights=VGG19_Weights.IMAGENET1K_V1)
            source = "torchvision/IMAGENET1K_V1"
        except Exception:
            torch.manual_seed(seed)
            model = vgg19(weights=None)
    features = model.features.eval().to(device)
    return features, source
