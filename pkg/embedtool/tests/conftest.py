import os
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

# fail hub lookups immediately; extraction falls back to seeded random init
os.environ.setdefault("HF_HUB_OFFLINE", "1")

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def image_dir(tmp_path_factory):
    """A small deterministic image folder for extraction runs."""
    root = tmp_path_factory.mktemp("images")
    rng = np.random.default_rng(42)
    for i in range(3):
        arr = rng.integers(0, 256, size=(60, 60, 3), dtype=np.uint8)
        Image.fromarray(arr).save(root / f"img{i}.png")
    base = np.asarray(Image.open(root / "img0.png"), dtype=np.float64) / 255.0
    shifted = np.clip(base * 1.05, 0, 1)
    Image.fromarray((shifted * 255).astype(np.uint8)).save(root / "img0_bright.png")
    return root
