"""Outer refinement loop: alternating mask and texture phases with boundary
splitting, the tiny-ambiguous-Gaussian robustness pass, label thresholding,
and sequential multi-object labeling."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import mask as mk
from .metrics import mean_acc, mean_iou
from .raster import backward_mask, backward_rgb, render
from .scene import Camera, Dataset, GaussianCloud, ValidationError, sigmoid
from .texture import DEFAULT_LAMBDA, TextureOptState, psnr, rgb_loss_grad, step_texture

log = logging.getLogger(__name__)

SCENE_KINDS = ("forward", "surround")
# rounds of (mask, texture) phases, in units of training views: the final
# no-split mask phase (2 per view) is added on top of this budget
ROUND_BUDGET_PER_VIEW = {"forward": 20, "surround": 12}
DEFAULT_DELTA = {"forward": 0.5, "surround": 0.8}


@dataclass
class RefineConfig:
    """Hyperparameters of one refinement run.

    ``phase_iters`` and ``total_iters`` default to 2 and 20 (forward) or 12
    (surround) iterations per training view once the view count is known;
    ``total_iters`` covers the alternating rounds only.
    """

    delta: Optional[float] = None
    phase_iters: Optional[int] = None
    total_iters: Optional[int] = None
    mask_lr: float = mk.MASK_LR
    lam: float = DEFAULT_LAMBDA
    eps: float = mk.SIG_EPS
    seg_threshold: float = 0.5
    tiny_px: float = 1.0
    pixel_scale_px: float = 1.0
    scene_kind: str = "forward"
    seed: int = 0
    split: bool = True
    texture: bool = True
    robustness: bool = False
    learn_geometry: bool = True
    holdout_every: int = 8
    spatial_lr_scale: Optional[float] = None
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.scene_kind not in SCENE_KINDS:
            raise ValidationError(f"scene_kind: expected one of {SCENE_KINDS}, got {self.scene_kind!r}")
        if self.delta is None:
            self.delta = DEFAULT_DELTA[self.scene_kind]
        if not 0.0 < self.delta < 1.0:
            raise ValidationError(f"delta: must lie in (0, 1), got {self.delta}")
        if self.mask_lr <= 0:
            raise ValidationError(f"mask_lr: must be positive, got {self.mask_lr}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValidationError(f"lam: must lie in [0, 1], got {self.lam}")
        if self.eps <= 0:
            raise ValidationError(f"eps: must be positive, got {self.eps}")
        if self.holdout_every < 0:
            raise ValidationError(f"holdout_every: must be >= 0, got {self.holdout_every}")
        self.background = tuple(float(v) for v in self.background)
        if len(self.background) != 3:
            raise ValidationError("background: expected 3 values")
        if self.phase_iters is not None or self.total_iters is not None:
            self._check_budget(self.phase_iters, self.total_iters)

    @staticmethod
    def _check_budget(phase_iters, total_iters):
        if phase_iters is not None and (int(phase_iters) != phase_iters or phase_iters < 0):
            raise ValidationError(f"phase_iters: must be a non-negative integer, got {phase_iters}")
        if total_iters is not None:
            if int(total_iters) != total_iters or total_iters <= 0:
                raise ValidationError(f"total_iters: must be a positive integer, got {total_iters}")
            if phase_iters is not None and (phase_iters == 0 or total_iters % (2 * phase_iters)):
                raise ValidationError(
                    f"total_iters: {total_iters} is not a positive multiple of "
                    f"2*phase_iters = {2 * phase_iters}")

    def resolved(self, n_train_views: int) -> "RefineConfig":
        """Copy with iteration budgets filled in for ``n_train_views`` views."""
        phase = 2 * n_train_views if self.phase_iters is None else self.phase_iters
        total = (ROUND_BUDGET_PER_VIEW[self.scene_kind] * n_train_views
                 if self.total_iters is None else self.total_iters)
        self._check_budget(phase, total)
        return dataclasses.replace(self, phase_iters=int(phase), total_iters=int(total))

    @property
    def n_rounds(self) -> int:
        if self.phase_iters is None or self.total_iters is None:
            raise ValidationError("budget not resolved; call resolved(n_views) first")
        return self.total_iters // (2 * self.phase_iters)

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["background"] = list(self.background)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "RefineConfig":
        if "lambda" in d:
            d = dict(d)
            d["lam"] = d.pop("lambda")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ValidationError(f"{unknown[0]}: unknown config field")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ValidationError(str(exc)) from None


def train_views(n_views: int, holdout_every: int = 8) -> np.ndarray:
    """Indices of training views; every ``holdout_every``-th view (0, 8, ...) is held out."""
    idx = np.arange(n_views)
    if holdout_every <= 0 or n_views < 2:
        return idx
    return idx[idx % holdout_every != 0]


def heldout_views(n_views: int, holdout_every: int = 8) -> np.ndarray:
    return np.setdiff1d(np.arange(n_views), train_views(n_views, holdout_every))


def camera_extent(cameras: Sequence[Camera]) -> float:
    """1.1 x the largest distance of a camera center from the mean center."""
    centers = np.array([c.center for c in cameras])
    radius = float(np.max(np.linalg.norm(centers - centers.mean(0), axis=1))) if len(centers) else 0.0
    return 1.1 * radius if radius > 0 else 1.0


def _resolve(cfg: RefineConfig, dataset: Dataset) -> RefineConfig:
    if cfg.phase_iters is not None and cfg.total_iters is not None:
        return cfg
    return cfg.resolved(len(train_views(len(dataset), cfg.holdout_every)))


def _resolve_phase(cfg: RefineConfig, dataset: Dataset) -> RefineConfig:
    """A single phase only needs ``phase_iters``; zero is a valid no-op phase."""
    if cfg.phase_iters is not None:
        return cfg
    return dataclasses.replace(cfg, phase_iters=2 * len(train_views(len(dataset), cfg.holdout_every)))


def _view_order(views: np.ndarray, n_iters: int, seed_key) -> np.ndarray:
    """Round-robin over a seeded permutation of ``views``."""
    if len(views) == 0 or n_iters == 0:
        return np.zeros(0, dtype=np.int64)
    perm = np.random.default_rng(seed_key).permutation(views)
    return perm[np.arange(n_iters) % len(perm)]


@dataclass
class RefineLog:
    """Per-iteration losses and per-phase summaries of one run."""

    iterations: List[dict] = field(default_factory=list)
    phases: List[dict] = field(default_factory=list)
    final_mask_phase: List[dict] = field(default_factory=list)
    splits: List[dict] = field(default_factory=list)
    removals: List[int] = field(default_factory=list)
    conflicts: List[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def mask_phase(cloud: GaussianCloud, dataset: Dataset, obj_id: int, cfg: RefineConfig,
               stats: Optional[mk.MaskStats] = None, split: Optional[bool] = None,
               round_index: int = 0, rlog: Optional[RefineLog] = None,
               iter_sink: Optional[list] = None):
    """Optimize mask logits with geometry and texture frozen.

    Statistics are accumulated on the first visit to each view (geometry does
    not move inside the phase, so later visits repeat the same counts). At
    phase end the boundary set is split when ``split`` (default ``cfg.split``)
    is on, and fresh stats are returned for a split cloud.
    Returns ``(cloud, stats)``.
    """
    if obj_id not in dataset.mask_sets:
        raise ValidationError(f"object {obj_id}: dataset has no mask set")
    cfg = _resolve_phase(cfg, dataset)
    split = cfg.split if split is None else split
    masks = dataset.mask_sets[obj_id]
    coverage = dataset.mask_coverage[obj_id]
    views = train_views(len(dataset), cfg.holdout_every)
    views = views[np.asarray(coverage)[views]]
    if stats is None or len(stats) != len(cloud):
        stats = mk.MaskStats.zeros(len(cloud))
    opt = mk.MaskOptState(len(cloud), cfg.mask_lr)
    seen = set()
    sink = rlog.iterations if (iter_sink is None and rlog is not None) else iter_sink
    losses = []
    for v in _view_order(views, cfg.phase_iters, [cfg.seed, round_index, 0]):
        v = int(v)
        fb = render(cloud, dataset.cameras[v], want_backward=True, background=cfg.background)
        gt = masks[v]
        loss = mk.mask_loss(fb.mask, gt)
        mb = backward_mask(fb, gt)
        mk.step_mask_logits(cloud, mb.dl_dm, opt)
        if v not in seen:
            mk.accumulate_view(stats, mb, cfg.eps)
            seen.add(v)
        losses.append(loss)
        if sink is not None:
            sink.append({"phase": "mask", "round": round_index, "view": v, "loss": loss})
    stats.footprint_px = mk.footprint_px(cloud, [dataset.cameras[v] for v in views])
    summary = {"phase": "mask", "round": round_index, "iters": len(losses),
               "mean_loss": float(np.mean(losses)) if losses else 0.0,
               "n_gaussians": len(cloud), "n_split": 0}
    if split and len(seen):
        bset = mk.select_boundary(stats, cfg.delta)
        cloud, report = mk.split_boundary(cloud, bset, cfg.pixel_scale_px,
                                          rng_seed=_split_seed(cfg.seed, round_index))
        summary["n_split"] = report.n_split
        summary["n_gaussians_after"] = len(cloud)
        if rlog is not None:
            rlog.splits.append({"round": round_index, **report.to_json()})
        if report.n_split:
            stats = mk.MaskStats.zeros(len(cloud))
    if rlog is not None:
        rlog.phases.append(summary)
    return cloud, stats


def _split_seed(seed: int, round_index: int) -> int:
    return int(np.random.default_rng([seed, round_index, 2]).integers(2**31))


def mean_psnr(cloud: GaussianCloud, dataset: Dataset, views, background=(0.0, 0.0, 0.0)) -> float:
    vals = [psnr(np.clip(render(cloud, dataset.cameras[v], background=background).color, 0, 1),
                 dataset.images[v]) for v in views]
    return float(np.mean(vals)) if vals else math.nan


def texture_phase(cloud: GaussianCloud, dataset: Dataset, cfg: RefineConfig,
                  opt_state: Optional[TextureOptState] = None, round_index: int = 0,
                  rlog: Optional[RefineLog] = None) -> GaussianCloud:
    """Photometric refinement of geometry and color; mask logits untouched.

    A fresh optimizer (and position-rate schedule) is used unless
    ``opt_state`` is passed in.
    """
    cfg = _resolve_phase(cfg, dataset)
    views = train_views(len(dataset), cfg.holdout_every)
    if opt_state is None:
        scale = cfg.spatial_lr_scale
        if scale is None:
            scale = camera_extent([dataset.cameras[v] for v in views])
        opt_state = TextureOptState(cloud, cfg.phase_iters, scale, cfg.learn_geometry)
    losses = []
    for v in _view_order(views, cfg.phase_iters, [cfg.seed, round_index, 1]):
        v = int(v)
        fb = render(cloud, dataset.cameras[v], want_backward=True, background=cfg.background)
        loss, dl = rgb_loss_grad(fb.color, dataset.images[v], cfg.lam)
        step_texture(cloud, backward_rgb(fb, dl), opt_state)
        losses.append(loss)
        if rlog is not None:
            rlog.iterations.append({"phase": "texture", "round": round_index, "view": v, "loss": loss})
    if rlog is not None:
        rlog.phases.append({"phase": "texture", "round": round_index, "iters": len(losses),
                            "mean_loss": float(np.mean(losses)) if losses else 0.0,
                            "n_gaussians": len(cloud),
                            "train_psnr": mean_psnr(cloud, dataset, views, cfg.background)})
    return cloud


def joint_refine(cloud: GaussianCloud, dataset: Dataset, obj_id: int, cfg: RefineConfig,
                 rlog: Optional[RefineLog] = None):
    """Alternate mask and texture phases, then run one no-split mask phase
    whose statistics describe the terminal cloud. Returns ``(cloud, stats)``.

    With ``cfg.texture`` off the texture slot of each round is skipped.
    """
    cfg = _resolve(cfg, dataset)
    cloud = cloud.copy()
    stats = None
    for r in range(cfg.n_rounds):
        cloud, stats = mask_phase(cloud, dataset, obj_id, cfg, None, cfg.split, r, rlog)
        if cfg.texture:
            cloud = texture_phase(cloud, dataset, cfg, None, r, rlog)
    sink = rlog.final_mask_phase if rlog is not None else None
    cloud, stats = mask_phase(cloud, dataset, obj_id, cfg, None, False, cfg.n_rounds, None, sink)
    return cloud, stats


def robustness_pass(cloud: GaussianCloud, stats: mk.MaskStats, cfg: RefineConfig):
    """Delete ambiguous Gaussians (mean_sig < delta) with footprint < tiny_px.

    Returns ``(cloud, removed_indices)``, indices into the input cloud.
    """
    if len(stats) != len(cloud):
        raise mk.ContractViolation(f"stats track {len(stats)} Gaussians, cloud has {len(cloud)}")
    bset = mk.select_boundary(stats, cfg.delta)
    tiny = stats.footprint_px[bset.indices] < cfg.tiny_px
    removed = np.sort(bset.indices[tiny])
    keep = np.ones(len(cloud), dtype=bool)
    keep[removed] = False
    return cloud.subset(np.flatnonzero(keep)), removed


@dataclass
class SegmentationResult:
    foreground_indices: np.ndarray
    background_indices: np.ndarray
    removed_tiny_indices: np.ndarray
    masks: List[np.ndarray]
    foreground_images: List[np.ndarray] = field(default_factory=list)
    background_images: List[np.ndarray] = field(default_factory=list)
    metrics: Dict[str, float] = field(default_factory=dict)


def render_label_mask(cloud: GaussianCloud, camera: Camera, labels: np.ndarray) -> np.ndarray:
    """Binary mask from compositing 0/1 labels and thresholding at 0.5."""
    fb = render(cloud, camera, mask_labels=np.asarray(labels, dtype=np.float64))
    return (fb.mask > 0.5).astype(np.uint8)


def segment(cloud: GaussianCloud, cfg: RefineConfig, cameras: Optional[Sequence[Camera]] = None,
            gt_masks: Optional[Sequence[np.ndarray]] = None, removed=None,
            render_images: bool = False) -> SegmentationResult:
    """Split the cloud at m > seg_threshold; render masks and score them.

    ``removed`` lists indices deleted by the robustness pass; they join
    neither subset and are excluded from rendering.
    """
    n = len(cloud)
    removed = np.zeros(0, dtype=np.int64) if removed is None else np.asarray(removed, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    alive[removed] = False
    fg = sigmoid(cloud.mask_logits) > cfg.seg_threshold
    res = SegmentationResult(np.flatnonzero(fg & alive), np.flatnonzero(~fg & alive),
                             np.sort(removed), [])
    if cameras is None:
        return res
    live = cloud.subset(np.flatnonzero(alive))
    labels = fg[alive].astype(np.float64)
    res.masks = [render_label_mask(live, cam, labels) for cam in cameras]
    if render_images:
        fgc, bgc = cloud.subset(res.foreground_indices), cloud.subset(res.background_indices)
        res.foreground_images = [render(fgc, cam, background=cfg.background).color for cam in cameras]
        res.background_images = [render(bgc, cam, background=cfg.background).color for cam in cameras]
    if gt_masks is not None:
        res.metrics = {"mIoU": mean_iou(res.masks, gt_masks), "mAcc": mean_acc(res.masks, gt_masks)}
    res.metrics.update({"n_foreground": int(len(res.foreground_indices)),
                        "n_background": int(len(res.background_indices)),
                        "n_removed": int(len(removed))})
    return res


def refine_object(cloud: GaussianCloud, dataset: Dataset, obj_id: int, cfg: RefineConfig,
                  rlog: Optional[RefineLog] = None):
    """joint_refine followed by the robustness pass when enabled.

    Returns ``(cloud, stats, removed)``; ``removed`` indexes the joint_refine
    output, which is what ``cloud`` is when nothing was removed.
    """
    cloud, stats = joint_refine(cloud, dataset, obj_id, cfg, rlog)
    removed = np.zeros(0, dtype=np.int64)
    if cfg.robustness:
        cloud, removed = robustness_pass(cloud, stats, cfg)
        if rlog is not None:
            rlog.removals = removed.tolist()
    return cloud, stats, removed


def multi_object_refine(cloud: GaussianCloud, dataset: Dataset, object_ids: Sequence[int],
                        cfg: RefineConfig, rlog: Optional[RefineLog] = None):
    """Sequential single-object refinement with first-claim id assignment.

    After object k is refined, unassigned Gaussians with m > seg_threshold
    take obj_id = k; Gaussians already owned by an earlier object keep their
    id and the clash is logged. Mask logits are reset before the next object.
    Returns ``(cloud, conflicts)``.
    """
    for k in object_ids:
        if k not in dataset.mask_sets:
            raise ValidationError(f"object {k}: dataset has no mask set")
        if k < 1:
            raise ValidationError(f"object ids must be >= 1, got {k}")
    conflicts = []
    cloud = cloud.copy()
    for k in object_ids:
        cloud, _, _ = refine_object(cloud, dataset, k, cfg, rlog)
        claim = sigmoid(cloud.mask_logits) > cfg.seg_threshold
        clash = claim & (cloud.obj_ids != 0) & (cloud.obj_ids != k)
        for i in np.flatnonzero(clash):
            conflicts.append({"index": int(i), "owner": int(cloud.obj_ids[i]), "claimant": int(k)})
        if clash.any():
            log.warning("object %d: %d Gaussians already owned by earlier objects", k, int(clash.sum()))
        cloud.obj_ids[claim & (cloud.obj_ids == 0)] = k
        cloud.mask_logits[:] = 0.0
    if rlog is not None:
        rlog.conflicts.extend(conflicts)
    return cloud, conflicts


def query_object(cloud: GaussianCloud, obj_id: int) -> GaussianCloud:
    return cloud.subset(np.flatnonzero(cloud.obj_ids == obj_id))
