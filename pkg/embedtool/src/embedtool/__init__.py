"""embedtool: descriptor and feature-map extraction to EMB1/FMP1 containers."""

from .extract import ExtractJob, extract_feature_maps, extract_image_descriptors, run_job

__all__ = ["ExtractJob", "extract_feature_maps", "extract_image_descriptors", "run_job"]

__version__ = "0.1.0"
