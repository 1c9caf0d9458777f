"""Mask-label supervision: loss, supervision statistics, boundary selection,
boundary-adaptive splitting and the mask-logit optimizer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .optim import Adam
from .raster import ContractViolation, MaskBackward
from .scene import Camera, GaussianCloud, ValidationError, quat_to_rotmat, sigmoid

SIG_EPS = 1e-6
CHILD_SCALE_DIVISOR = 1.6
MASK_LR = 0.1


def _check_dims(a, b):
    if np.shape(a) != np.shape(b):
        raise ValidationError(f"dimension mismatch: {np.shape(a)} vs {np.shape(b)}")


def mask_loss(rendered: np.ndarray, gt: np.ndarray, valid: Optional[np.ndarray] = None) -> float:
    """-sum(M * R) + sum((1 - M) * R) over the (valid) pixels.

    The first term carries a minus sign so that the per-pixel derivative is
    -alpha*T inside the mask and +alpha*T outside.
    """
    _check_dims(rendered, gt)
    weight = 1.0 - 2.0 * (np.asarray(gt) > 0)
    if valid is not None:
        weight = np.where(valid, weight, 0.0)
    return float(np.sum(weight * rendered))


def mask_sig(pos, neg, eps: float = SIG_EPS):
    """|N+ - N-| / (N+ + N- + eps); works elementwise on arrays."""
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    if np.any(pos < 0) or np.any(neg < 0):
        raise ValidationError("supervision counts must be non-negative")
    return np.abs((pos - neg) / (pos + neg + eps))


@dataclass
class MaskStats:
    """Per-Gaussian supervision statistics for one mask phase."""

    sig_sum: np.ndarray
    observed_views: np.ndarray
    footprint_px: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "MaskStats":
        return cls(np.zeros(n), np.zeros(n, dtype=np.int64), np.zeros(n))

    def __len__(self) -> int:
        return len(self.sig_sum)

    @property
    def last_round_scale_px(self) -> np.ndarray:
        return self.footprint_px

    @property
    def mean_sig(self) -> np.ndarray:
        """Average over observed views; never-observed Gaussians read as 1."""
        obs = self.observed_views
        return np.where(obs > 0, self.sig_sum / np.maximum(obs, 1), 1.0)


def accumulate_view(stats: MaskStats, mb: MaskBackward, eps: float = SIG_EPS) -> MaskStats:
    if len(mb.pos_count) != len(stats):
        raise ContractViolation(
            f"mask backward covers {len(mb.pos_count)} Gaussians, stats track {len(stats)}")
    seen = (mb.pos_count + mb.neg_count) >= 1
    stats.sig_sum[seen] += mask_sig(mb.pos_count[seen], mb.neg_count[seen], eps)
    stats.observed_views[seen] += 1
    return stats


@dataclass
class BoundarySet:
    indices: np.ndarray
    selected_threshold: float
    mean_sig: np.ndarray = field(default_factory=lambda: np.zeros(0))
    observed_views: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    footprint_px: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return len(self.indices)


def select_boundary(stats: MaskStats, delta: float) -> BoundarySet:
    """Observed Gaussians whose mean mask_sig is below ``delta``."""
    ms = stats.mean_sig
    idx = np.flatnonzero((ms < delta) & (stats.observed_views >= 1))
    return BoundarySet(idx, float(delta), ms[idx], stats.observed_views[idx].copy(),
                       stats.footprint_px[idx].copy())


def footprint_px(cloud: GaussianCloud, cameras: Sequence[Camera]) -> np.ndarray:
    """Projected 3-sigma extent in pixels at the median-depth view.

    Views where a Gaussian is outside (near, far) are ignored; Gaussians in no
    view get 0.
    """
    n = len(cloud)
    if n == 0 or not cameras:
        return np.zeros(n)
    smax = np.exp(cloud.log_scales.max(axis=1))
    per_view = np.full((len(cameras), n), np.nan)
    for v, cam in enumerate(cameras):
        z = cloud.positions @ cam.R[2] + cam.translation[2]
        ok = (z > cam.near) & (z < cam.far)
        focal = 0.5 * (cam.fx + cam.fy)
        per_view[v, ok] = 3.0 * smax[ok] * focal / z[ok]
    out = np.zeros(n)
    seen = ~np.all(np.isnan(per_view), axis=0)
    if seen.any():
        # nanmedian over views; the footprint is monotone in depth, so this is the median-depth view
        out[seen] = np.nanmedian(per_view[:, seen], axis=0)
    return out


@dataclass
class SplitReport:
    parents: List[int]
    children: List[List[int]]
    views: List[int]
    mean_sig: List[float]
    excluded_small: List[int]

    @property
    def n_split(self) -> int:
        return len(self.parents)

    def to_json(self) -> dict:
        return {
            "splits": [
                {"parent": p, "children": c, "views": v, "mean_sig": s}
                for p, c, v, s in zip(self.parents, self.children, self.views, self.mean_sig)
            ],
            "excluded_small": self.excluded_small,
        }

    def new_index_of(self, n_old: int) -> np.ndarray:
        """Index in the new cloud for each surviving old Gaussian, -1 for split parents."""
        removed = np.zeros(n_old, dtype=bool)
        removed[self.parents] = True
        out = np.full(n_old, -1, dtype=np.int64)
        out[~removed] = np.arange(int((~removed).sum()))
        return out


def split_boundary(cloud: GaussianCloud, bset: BoundarySet, pixel_scale_px: float = 1.0,
                   rng_seed: int = 0):
    """Replace each large boundary Gaussian with two children.

    Survivors keep their relative order at the front of the new cloud; the
    children of the i-th split parent are appended as a pair.
    """
    n = len(cloud)
    idx = np.asarray(bset.indices, dtype=np.int64)
    if np.any((idx < 0) | (idx >= n)):
        raise ContractViolation("boundary indices out of range for this cloud")
    fp = _member_field(bset.footprint_px, len(idx), np.inf)
    views = _member_field(bset.observed_views, len(idx), 0)
    sigs = _member_field(bset.mean_sig, len(idx), 0.0)
    large = fp >= pixel_scale_px
    parents = idx[large]
    keep = np.ones(n, dtype=bool)
    keep[parents] = False
    survivors = cloud.subset(np.flatnonzero(keep))

    rng = np.random.default_rng(rng_seed)
    p2 = np.repeat(parents, 2)
    R = quat_to_rotmat(cloud.rotations[p2])
    s = np.exp(cloud.log_scales[p2])
    offsets = np.einsum("nij,nj->ni", R, s * rng.standard_normal((len(p2), 3)))
    children = cloud.subset(p2)
    children.positions = children.positions + offsets
    children.log_scales = children.log_scales - math.log(CHILD_SCALE_DIVISOR)
    new = survivors.concat(children)

    base = len(survivors)
    child_lists = [[base + 2 * i, base + 2 * i + 1] for i in range(len(parents))]
    report = SplitReport(
        parents=parents.tolist(), children=child_lists,
        views=[int(v) for v in views[large]], mean_sig=[float(v) for v in sigs[large]],
        excluded_small=idx[~large].tolist(),
    )
    return new, report


def _member_field(values, n, default):
    values = np.asarray(values)
    return values if len(values) == n else np.full(n, default)


class MaskOptState:
    """Adam state for mask logits (lr 0.1, betas 0.9/0.999, eps 1e-15)."""

    def __init__(self, n: int, lr: float = MASK_LR):
        self.adam = Adam((n,), lr)

    def __len__(self) -> int:
        return len(self.adam.m)


def step_mask_logits(cloud: GaussianCloud, dl_dm: np.ndarray, opt_state: MaskOptState) -> GaussianCloud:
    """One Adam step on mask_logit; ``dl_dm`` is chained through dm/dlogit = m(1-m)."""
    if len(opt_state) != len(cloud):
        raise ContractViolation(f"optimizer tracks {len(opt_state)} Gaussians, cloud has {len(cloud)}")
    m = sigmoid(cloud.mask_logits)
    opt_state.adam.step(cloud.mask_logits, np.asarray(dl_dm, dtype=np.float64) * m * (1.0 - m))
    return cloud
