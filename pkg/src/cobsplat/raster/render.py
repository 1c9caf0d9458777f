"""Tiled forward rendering and analytic backward passes."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from ..scene import Camera, GaussianCloud, ValidationError, sigmoid
from . import kernels
from .projection import Projection, bin_tiles, project, projection_backward

DETERMINISTIC_CHUNKS = 8

_settings = {"deterministic": False}


class ContractViolation(RuntimeError):
    """A caller broke an operation's precondition."""


def set_threads(n: Optional[int]) -> None:
    """Cap rasterizer parallelism; ``None`` reads ``COBSPLAT_THREADS``."""
    if n is None:
        env = os.environ.get("COBSPLAT_THREADS")
        if not env:
            return
        n = int(env)
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def set_deterministic(flag: bool) -> None:
    """Fix the gradient reduction layout independently of the thread count."""
    _settings["deterministic"] = bool(flag)


def _n_chunks() -> int:
    if _settings["deterministic"]:
        return DETERMINISTIC_CHUNKS
    return max(1, numba.get_num_threads())


@dataclass
class ContribRecords:
    """All per-pixel contributions, grouped by pixel in row-major order and
    depth-ordered within a pixel."""

    rows: np.ndarray
    cols: np.ndarray
    source_index: np.ndarray
    alpha: np.ndarray
    transmittance_before: np.ndarray

    def __len__(self) -> int:
        return len(self.rows)

    def at(self, j: int, k: int):
        sel = (self.rows == j) & (self.cols == k)
        return list(zip(self.source_index[sel].tolist(), self.alpha[sel].tolist(),
                        self.transmittance_before[sel].tolist()))


@dataclass
class FrameBuffer:
    color: np.ndarray
    mask: np.ndarray
    final_transmittance: np.ndarray
    n_records: np.ndarray
    camera: Camera
    background: np.ndarray
    # per-pixel sum of alpha*T over the composited contributions
    alpha_t_sum: Optional[np.ndarray] = None
    # backward state, present only when rendered with want_backward
    cloud: Optional[GaussianCloud] = None
    proj: Optional[Projection] = None
    bins: Optional[tuple] = None
    end_pos: Optional[np.ndarray] = None
    _records: Optional[ContribRecords] = field(default=None, repr=False)

    @property
    def has_backward(self) -> bool:
        return self.proj is not None

    @property
    def contribs(self) -> ContribRecords:
        self._require_backward()
        if self._records is None:
            ranges, plist, tiles_x = self.bins
            p = self.proj
            rows, cols, src, alphas, trans = kernels.records_kernel(
                ranges, plist, p.means, p.conics, p.opacities, self.camera.width,
                self.camera.height, tiles_x, self.end_pos, self.n_records)
            self._records = ContribRecords(rows, cols, p.source[src], alphas, trans)
        return self._records

    def _require_backward(self):
        if not self.has_backward:
            raise ContractViolation("frame buffer was rendered without want_backward")


def render(cloud: GaussianCloud, camera: Camera, want_backward: bool = False,
           background=(0.0, 0.0, 0.0), mask_labels: Optional[np.ndarray] = None) -> FrameBuffer:
    """Composite color and mask front to back over 16x16 tiles.

    ``mask_labels`` overrides the cloud's sigmoid(mask_logit) per Gaussian.
    """
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    proj = project(cloud, camera)
    ranges, plist, tiles_x = bin_tiles(proj, camera.width, camera.height)
    labels = sigmoid(cloud.mask_logits) if mask_labels is None else np.asarray(mask_labels, float)
    m = np.ascontiguousarray(labels[proj.source], dtype=np.float64)
    color, mask, final_t, end_pos, n_rec, wsum = kernels.forward_kernel(
        ranges, plist, proj.means, proj.conics, proj.opacities, proj.colors, m, bg,
        camera.width, camera.height, tiles_x, _n_chunks())
    fb = FrameBuffer(color, mask, final_t, n_rec, camera, bg, wsum)
    if want_backward:
        fb.cloud = cloud
        fb.proj = proj
        fb.bins = (ranges, plist, tiles_x)
        fb.end_pos = end_pos
    return fb


@dataclass
class RGBGrads:
    """Gradients w.r.t. storage parameters, one row per cloud Gaussian."""

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray

    def __add__(self, other: "RGBGrads") -> "RGBGrads":
        return RGBGrads(*(getattr(self, f) + getattr(other, f) for f in _GRAD_FIELDS))

    def scaled(self, s: float) -> "RGBGrads":
        return RGBGrads(*(getattr(self, f) * s for f in _GRAD_FIELDS))


_GRAD_FIELDS = ("positions", "log_scales", "rotations", "opacity_logits", "colors")


def backward_rgb(fb: FrameBuffer, dl_dpixel: np.ndarray) -> RGBGrads:
    """Gradients of a scalar loss, given its derivative w.r.t. the rendered color."""
    fb._require_backward()
    cam = fb.camera
    dl = np.ascontiguousarray(dl_dpixel, dtype=np.float64)
    if dl.shape != (cam.height, cam.width, 3):
        raise ValidationError(f"dL/dpixel shape {dl.shape} vs image {(cam.height, cam.width, 3)}")
    p = fb.proj
    ranges, plist, tiles_x = fb.bins
    d_mean, d_conic, d_opac, d_color = kernels.backward_rgb_kernel(
        ranges, plist, p.means, p.conics, p.opacities, p.colors, fb.background,
        cam.width, cam.height, tiles_x, fb.final_transmittance, fb.end_pos, dl, _n_chunks())
    grads = projection_backward(fb.cloud, p, d_mean.sum(0), d_conic.sum(0), d_opac.sum(0),
                                d_color.sum(0))
    return RGBGrads(**grads)


@dataclass
class MaskBackward:
    """Per-Gaussian derivative of the mask loss w.r.t. the label m (before the
    sigmoid chain), and counts of covered pixels with mask 1 / mask 0."""

    dl_dm: np.ndarray
    pos_count: np.ndarray
    neg_count: np.ndarray


def backward_mask(fb: FrameBuffer, gt_mask: np.ndarray,
                  valid: Optional[np.ndarray] = None) -> MaskBackward:
    """Signed alpha*T sums and supervision counts; geometry is treated as constant.

    ``valid`` optionally excludes pixels from supervision.
    """
    fb._require_backward()
    cam = fb.camera
    gt = np.asarray(gt_mask)
    if gt.shape != (cam.height, cam.width):
        raise ValidationError(f"mask {gt.shape[0]}×{gt.shape[1]} vs camera {cam.height}×{cam.width}")
    labels = (gt > 0).astype(np.int64)
    if valid is not None:
        labels = np.where(valid, labels, -1)
    p = fb.proj
    ranges, plist, tiles_x = fb.bins
    d_m, n_pos, n_neg = kernels.backward_pixel_weights_kernel(
        ranges, plist, p.means, p.conics, p.opacities, cam.width, cam.height, tiles_x,
        fb.end_pos, np.ascontiguousarray(labels), _n_chunks())
    n = len(fb.cloud)
    out = MaskBackward(np.zeros(n), np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64))
    out.dl_dm[p.source] = d_m.sum(0)
    out.pos_count[p.source] = n_pos.sum(0)
    out.neg_count[p.source] = n_neg.sum(0)
    return out
