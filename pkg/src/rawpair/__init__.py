"""rawpair: unpaired RAW->RGB color mapping at desk scale.

Builds pseudo-pairs between preprocessed RAW patches and target RGB
patches with fused Gromov-Wasserstein optimal transport, then trains
lightweight color-mapping heads against statistic-based losses.
"""

from . import cli, imgcore, mapper, objective, otmatch, pipeline, quality, rawproc, stitcher

__all__ = [
    "cli",
    "imgcore",
    "mapper",
    "objective",
    "otmatch",
    "pipeline",
    "quality",
    "rawproc",
    "stitcher",
]

__version__ = "0.1.0"
