"""Explainable active learning for semantic segmentation."""

from ._segxal import (
    IGNORE_LABEL,
    SegModel,
    SegxalError,
    dice,
    entropy_map,
    extract_candidates,
    fuse,
    generate_scene,
    proximity_mask,
    rasterize_polygon,
    run,
)

__all__ = [
    "IGNORE_LABEL",
    "SegModel",
    "SegxalError",
    "dice",
    "entropy_map",
    "extract_candidates",
    "fuse",
    "generate_scene",
    "proximity_mask",
    "rasterize_polygon",
    "run",
]
