"""Boundary-aware segmentation of 3D Gaussian scenes: a CPU rasterizer with
analytic gradients, mask-label optimization with boundary splitting, texture
restoration, and a synthetic benchmark."""

__version__ = "0.1.0"

from .scene import Camera, Dataset, Gaussian, GaussianCloud, ValidationError
from .raster import (ContractViolation, FrameBuffer, backward_mask, backward_rgb, render,
                     set_deterministic, set_threads)
from .mask import (BoundarySet, MaskStats, accumulate_view, mask_loss, mask_sig, select_boundary,
                   split_boundary)
from .texture import TextureOptState, dssim_loss, l1_loss, psnr, rgb_loss, ssim, step_texture
from .refine import (RefineConfig, RefineLog, joint_refine, mask_phase, multi_object_refine,
                     query_object, refine_object, robustness_pass, segment, texture_phase)
from .maskgen import MaskGenConfig, NoInitialPrompt, find_max_sub, two_stage_generate
from .metrics import acc, iou, mean_acc, mean_iou
from .synth import CorruptionSpec, SceneSpec, corrupt_masks, generate_scene, run_benchmark
from .plyio import load_ply, save_ply
from .dataset_io import load_dataset, save_dataset

__all__ = [
    "Camera", "Dataset", "Gaussian", "GaussianCloud", "ValidationError", "ContractViolation",
    "FrameBuffer", "backward_mask", "backward_rgb", "render", "set_deterministic", "set_threads",
    "BoundarySet", "MaskStats", "accumulate_view", "mask_loss", "mask_sig", "select_boundary",
    "split_boundary", "TextureOptState", "dssim_loss", "l1_loss", "psnr", "rgb_loss", "ssim",
    "step_texture", "RefineConfig", "RefineLog", "joint_refine", "mask_phase", "multi_object_refine",
    "query_object", "refine_object", "robustness_pass", "segment", "texture_phase", "MaskGenConfig",
    "NoInitialPrompt", "find_max_sub", "two_stage_generate", "acc", "iou", "mean_acc", "mean_iou",
    "CorruptionSpec", "SceneSpec", "corrupt_masks", "generate_scene", "run_benchmark", "load_ply",
    "save_ply", "load_dataset", "save_dataset", "__version__",
]
