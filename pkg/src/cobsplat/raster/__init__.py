"""Differentiable tiled Gaussian rasterizer (CPU, double precision)."""

from .kernels import ALPHA_MAX, ALPHA_MIN, T_MIN, TILE
from .oracle import reference_render
from .projection import Projected2D, Projection, bin_tiles, project
from .render import (
    ContractViolation,
    ContribRecords,
    FrameBuffer,
    MaskBackward,
    RGBGrads,
    backward_mask,
    backward_rgb,
    render,
    set_deterministic,
    set_threads,
)

__all__ = [
    "ALPHA_MAX", "ALPHA_MIN", "T_MIN", "TILE", "reference_render", "Projected2D", "Projection",
    "bin_tiles", "project", "ContractViolation", "ContribRecords", "FrameBuffer",
    "MaskBackward", "RGBGrads", "backward_mask", "backward_rgb", "render",
    "set_deterministic", "set_threads",
]
