"""Synthetic scenes with known object membership, mask corruption, and the
ablation benchmark harness.

A scene has two clouds. The fine "true" cloud renders the ground-truth
images and masks; every true Gaussian's 2-sigma ellipsoid lies inside its
own object region. The returned coarse cloud stands in for a vanilla
reconstruction: near region boundaries a fraction (the overlap factor) of its
Gaussians keep their full extent and straddle the boundary.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import ndimage

from .metrics import acc, iou, mean_acc, mean_iou  # noqa: F401  (re-exported)
from .raster import render
from .refine import (RefineConfig, RefineLog, heldout_views, mean_psnr, refine_object, segment,
                     texture_phase, train_views)
from .scene import Camera, Dataset, GaussianCloud, ValidationError, quat_to_rotmat

LAYOUTS = ("two-blob-interlock", "ring-and-core", "occluder-stack")
VARIANTS = ("baseline", "+BAGS", "+BAGS+BGTR", "+BAGS+BGTR+RAEM")


@dataclass
class SceneSpec:
    layout: str = "two-blob-interlock"
    n_gaussians: int = 260          # approximate object Gaussians in the coarse cloud
    n_backdrop: int = 140           # coarse backdrop Gaussians (layouts with a backdrop)
    true_density: float = 4.0       # true-cloud Gaussians per coarse Gaussian
    n_views: int = 12
    width: int = 64
    height: int = 64
    focal: float = 80.0
    # forward grid: cameras on an x/y grid at distance ``radius``
    grid_extent: Sequence[float] = (1.2, 0.8)
    # surround ring: ``radius`` and ``elevation_deg``
    radius: float = 4.0
    elevation_deg: float = 20.0
    overlap: float = 1.0
    straddle_gain: float = 1.8      # in-plane enlargement of interface straddlers
    prefit_iters_per_view: int = 40
    # position-rate multiplier for the prefit and for benchmark configs that
    # leave spatial_lr_scale unset; a few hundred coarse Gaussians are large
    # relative to the camera extent, so the extent alone barely moves them
    position_lr_scale: float = 48.0
    seed: int = 0

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValidationError(f"layout: expected one of {LAYOUTS}, got {self.layout!r}")
        if not 0.0 <= self.overlap <= 1.0:
            raise ValidationError(f"overlap: must lie in [0, 1], got {self.overlap}")
        if self.n_views < 1 or self.n_gaussians < 1:
            raise ValidationError("n_views and n_gaussians must be positive")
        self.grid_extent = tuple(float(v) for v in self.grid_extent)

    @property
    def scene_kind(self) -> str:
        return "surround" if self.layout == "ring-and-core" else "forward"

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["grid_extent"] = list(self.grid_extent)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SceneSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ValidationError(f"{unknown[0]}: unknown scene spec field")
        return cls(**d)


@dataclass
class CorruptionSpec:
    jitter_px: float = 0.0
    dilate_px: int = 0
    erode_px: int = 0
    flip_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.jitter_px < 0 or self.dilate_px < 0 or self.erode_px < 0:
            raise ValidationError("corruption amplitudes must be non-negative")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValidationError(f"flip_prob: must lie in [0, 1], got {self.flip_prob}")

    @property
    def is_identity(self) -> bool:
        return self.jitter_px == 0 and self.dilate_px == 0 and self.erode_px == 0 and self.flip_prob == 0

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "CorruptionSpec":
        return cls(**d)


# ---------------------------------------------------------------- layouts


@dataclass
class Layout:
    """Object regions and color field of a layout.

    ``label(p)`` gives the object id (0 = empty space) for world points,
    ``boxes`` the bounding boxes of each object for lattice sampling.
    """

    label: Callable[[np.ndarray], np.ndarray]
    color: Callable[[np.ndarray, np.ndarray], np.ndarray]
    boxes: Dict[int, np.ndarray]
    thickness: float  # ratio of the thin-axis scale to the in-plane scale
    flat: bool        # thin axis is world z (else isotropic)
    layers: int = 1   # lattice layers along the thin axis
    # optional background slab (membership 0) filling the views behind the objects
    backdrop: Optional[np.ndarray] = None
    backdrop_color: Optional[Callable[[np.ndarray], np.ndarray]] = None


def _interlock() -> Layout:
    a, b, t = 1.3, 0.9, 0.12

    def interface(y):
        return 0.18 * np.sin(2.5 * np.pi * y / b)

    def label(p):
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        inside = ((x / a) ** 2 + (y / b) ** 2 <= 1.0) & (np.abs(z) <= t)
        return np.where(inside, np.where(x < interface(y), 1, 2), 0)

    def color(p, lab):
        x, y = p[..., 0], p[..., 1]
        slope = 0.18 * 2.5 * np.pi / b * np.cos(2.5 * np.pi * y / b)
        d = np.abs(x - interface(y)) / np.sqrt(1 + slope ** 2)
        near = np.exp(-(d / 0.35) ** 2)[..., None]
        shared = np.array([0.62, 0.52, 0.36])
        base = np.where((lab == 1)[..., None], [0.85, 0.30, 0.18], [0.25, 0.45, 0.80])
        stripes = 0.08 * np.sin(9.0 * x + 5.0 * y)[..., None] * np.array([1.0, 0.8, 0.6])
        return np.clip((1 - near) * base + near * shared + stripes, 0.02, 0.98)

    box = np.array([[-a, -b, -t], [a, b, t]])
    return Layout(label, color, {1: box, 2: box}, thickness=0.35, flat=True, layers=2,
                  backdrop=np.array([[-3.0, -2.6, 1.1], [3.0, 2.6, 1.3]]),
                  backdrop_color=_backdrop_color)


def _backdrop_color(p):
    x, y = p[..., 0], p[..., 1]
    return np.clip(np.stack([0.22 + 0.05 * x, 0.3 + 0.08 * np.sin(1.5 * y), 0.26 + 0.04 * np.cos(2 * x)], -1),
                   0.02, 0.98)


def _ring_and_core() -> Layout:
    rc, R, r = 0.45, 0.95, 0.2

    def label(p):
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        core = x * x + y * y + z * z <= rc * rc
        ring = (np.sqrt(x * x + z * z) - R) ** 2 + y * y <= r * r
        return np.where(core, 1, np.where(ring, 2, 0))

    def color(p, lab):
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        ang = np.arctan2(z, x)
        c1 = np.stack([0.75 + 0.15 * np.sin(6 * y), 0.55 + 0.1 * np.cos(5 * x), 0.35 + 0.1 * np.sin(4 * z)], -1)
        c2 = np.stack([0.6 + 0.1 * np.sin(3 * ang), 0.5 + 0.1 * np.cos(3 * ang), 0.42 + 0.05 * np.sin(8 * y)], -1)
        return np.clip(np.where((lab == 1)[..., None], c1, c2), 0.02, 0.98)

    core = np.array([[-rc, -rc, -rc], [rc, rc, rc]])
    ring = np.array([[-R - r, -r, -R - r], [R + r, r, R + r]])
    return Layout(label, color, {1: core, 2: ring}, thickness=1.0, flat=False)


def _occluder_stack() -> Layout:
    disks = [(-0.78, 0.12, -1.0, 0.4), (0.0, -0.1, 0.0, 0.42), (0.8, 0.1, 1.0, 0.45)]
    t = 0.08

    def label(p):
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        out = np.zeros(np.shape(x), dtype=np.int64)
        for k, (cx, cy, cz, rad) in enumerate(disks, start=1):
            inside = ((x - cx) ** 2 + (y - cy) ** 2 <= rad * rad) & (np.abs(z - cz) <= t)
            out = np.where((out == 0) & inside, k, out)
        return out

    palette = np.array([[0.85, 0.35, 0.2], [0.7, 0.5, 0.3], [0.3, 0.5, 0.75]])

    def color(p, lab):
        x, y = p[..., 0], p[..., 1]
        base = palette[np.clip(lab - 1, 0, 2)]
        return np.clip(base + 0.08 * np.sin(8 * x - 6 * y)[..., None], 0.02, 0.98)

    boxes = {k: np.array([[cx - rad, cy - rad, cz - t], [cx + rad, cy + rad, cz + t]])
             for k, (cx, cy, cz, rad) in enumerate(disks, start=1)}
    return Layout(label, color, boxes, thickness=0.35, flat=True)


_LAYOUT_FACTORY = {"two-blob-interlock": _interlock, "ring-and-core": _ring_and_core,
                   "occluder-stack": _occluder_stack}


def get_layout(name: str) -> Layout:
    if name not in _LAYOUT_FACTORY:
        raise ValidationError(f"layout: expected one of {LAYOUTS}, got {name!r}")
    return _LAYOUT_FACTORY[name]()


def _sphere_dirs(n: int) -> np.ndarray:
    # Fibonacci sphere plus the coordinate axes
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    th = np.pi * (1 + 5 ** 0.5) * i
    d = np.stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)], -1)
    return np.concatenate([d, np.eye(3), -np.eye(3)])


_CONTAIN_DIRS = _sphere_dirs(58)


def ellipsoid_contained(layout: Layout, pos, scales, rots, labels, k_sigma=2.0, dirs=None):
    """True where every sampled point of the k-sigma ellipsoid shares the center's label."""
    dirs = _CONTAIN_DIRS if dirs is None else dirs
    R = quat_to_rotmat(rots)
    pts = pos[:, None, :] + k_sigma * np.einsum("nij,mj->nmi", R * scales[:, None, :], dirs)
    return np.all(layout.label(pts) == labels[:, None], axis=1)


def _lattice(box, spacing, rng, flat, layers=1):
    lo, hi = box
    axes = [np.arange(lo[d] + spacing / 2, hi[d], spacing) for d in range(3)]
    if flat:
        axes[2] = lo[2] + (hi[2] - lo[2]) * (np.arange(layers) + 0.5) / layers
    g = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    jit = rng.uniform(-0.3, 0.3, g.shape) * spacing
    if flat:
        jit[:, 2] *= 0.2
    return g + jit


def _random_rotations(rng, n, flat):
    if flat:
        ang = rng.uniform(0, np.pi, n)
        return np.stack([np.cos(ang / 2), np.zeros(n), np.zeros(n), np.sin(ang / 2)], -1)
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def _crosses_other_object(layout, pos, scales, rots, labels, k_sigma=2.0):
    R = quat_to_rotmat(rots)
    pts = pos[:, None, :] + k_sigma * np.einsum("nij,mj->nmi", R * scales[:, None, :], _CONTAIN_DIRS)
    lab = layout.label(pts)
    return np.any((lab != labels[:, None]) & (lab > 0), axis=1)


def _populate(layout, spacing, rng, straddle_frac, min_scale, gain=1.0):
    """Seed Gaussians on a jittered lattice and shrink those that cross a
    region boundary, except a ``straddle_frac`` fraction.

    Straddlers of an object-object interface are enlarged in-plane by
    ``gain`` and absorb the other Gaussians whose centers they cover within
    one sigma, mimicking how a reconstruction merges similar-looking texture
    across the interface.
    """
    pos, lab = [], []
    for k, box in layout.boxes.items():
        p = _lattice(box, spacing, rng, layout.flat, layout.layers)
        keep = layout.label(p) == k
        pos.append(p[keep])
        lab.append(np.full(keep.sum(), k))
    pos = np.concatenate(pos)
    lab = np.concatenate(lab)
    n = len(pos)
    base = 0.6 * spacing
    scales = base * rng.uniform(0.8, 1.25, (n, 3))
    scales[:, 2] = base * layout.thickness * (1.0 if layout.flat else rng.uniform(0.8, 1.25, n))
    rots = _random_rotations(rng, n, layout.flat)
    ok = ellipsoid_contained(layout, pos, scales, rots, lab)
    straddle = (~ok) & (rng.uniform(size=n) < straddle_frac)
    alive = np.ones(n, dtype=bool)
    if gain != 1.0 and straddle.any():
        inter = np.flatnonzero(straddle & _crosses_other_object(layout, pos, scales, rots, lab))
        for i in rng.permutation(inter):
            if not alive[i]:
                continue
            scales[i, :2] *= gain
            if not layout.flat:
                scales[i, 2] *= gain
            R = quat_to_rotmat(rots[i])
            local = (pos - pos[i]) @ R / scales[i]
            absorb = (np.sum(local ** 2, axis=1) < 1.0) & ~straddle & alive
            alive[absorb] = False
    for _ in range(40):
        bad = ~ok & ~straddle
        if not bad.any():
            break
        scales[bad] *= 0.85
        ok[bad] = ellipsoid_contained(layout, pos[bad], scales[bad], rots[bad], lab[bad])
    alive &= (ok | straddle) & (scales.max(axis=1) >= min_scale)
    return pos[alive], scales[alive], rots[alive], lab[alive], straddle[alive]


def _populate_backdrop(layout, spacing, rng):
    p = _lattice(layout.backdrop, spacing, rng, True)
    n = len(p)
    scales = 0.6 * spacing * rng.uniform(0.8, 1.25, (n, 3))
    scales[:, 2] = 0.1 * spacing
    return p, scales, _random_rotations(rng, n, True)


def make_cameras(spec: SceneSpec) -> List[Camera]:
    cams = []
    if spec.scene_kind == "surround":
        el = math.radians(spec.elevation_deg)
        for i in range(spec.n_views):
            az = 2 * math.pi * i / spec.n_views
            eye = spec.radius * np.array([math.cos(el) * math.cos(az), -math.sin(el),
                                          math.cos(el) * math.sin(az)])
            cams.append(Camera.look_at(eye, [0, 0, 0], spec.width, spec.height, spec.focal))
        return cams
    cols = int(math.ceil(math.sqrt(spec.n_views * 1.5)))
    rows = int(math.ceil(spec.n_views / cols))
    ex, ey = spec.grid_extent
    for i in range(spec.n_views):
        r, c = divmod(i, cols)
        x = 0.0 if cols == 1 else -ex / 2 + ex * c / (cols - 1)
        y = 0.0 if rows == 1 else -ey / 2 + ey * r / (rows - 1)
        cams.append(Camera.look_at([x, y, -spec.radius], [0, 0, 0], spec.width, spec.height, spec.focal))
    return cams


@dataclass
class SyntheticScene:
    """Unpacks as ``(cloud, dataset, membership)``."""

    cloud: GaussianCloud
    dataset: Dataset
    membership: np.ndarray
    truth: GaussianCloud
    truth_membership: np.ndarray
    layout: Layout
    spec: SceneSpec
    straddlers: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __iter__(self):
        return iter((self.cloud, self.dataset, self.membership))

    def region_label(self, positions) -> np.ndarray:
        return self.layout.label(np.asarray(positions, dtype=np.float64))


def _cloud_from(layout, pos, scales, rots, lab, opacity, backdrop=None):
    """Object Gaussians, followed by backdrop Gaussians (membership 0) when given."""
    rgb = layout.color(pos, lab)
    if backdrop is not None:
        bpos, bsc, brot = backdrop
        pos, scales, rots = np.concatenate([pos, bpos]), np.concatenate([scales, bsc]), np.concatenate([rots, brot])
        rgb = np.concatenate([rgb, layout.backdrop_color(bpos)])
        lab = np.concatenate([lab, np.zeros(len(bpos), dtype=lab.dtype)])
    return GaussianCloud.from_rgb(pos, scales, rgb, np.full(len(pos), opacity), rotations=rots), lab


def _restore_interface(layout, cloud, membership, straddle, seeded_positions, k_sigma=2.0):
    """Return fitted non-straddlers whose center drifted into another object to
    their seeded center, then shrink those whose k-sigma extent still reaches
    another object."""
    check = np.flatnonzero(~straddle & (membership > 0))
    here = layout.label(cloud.positions[check])
    drifted = check[(here > 0) & (here != membership[check])]
    cloud.positions[drifted] = seeded_positions[drifted]
    for _ in range(40):
        if len(check) == 0:
            break
        bad = _crosses_other_object(layout, cloud.positions[check], np.exp(cloud.log_scales[check]),
                                    cloud.rotations[check], membership[check], k_sigma)
        check = check[bad]
        cloud.log_scales[check] += math.log(0.85)


def carry_membership(membership, splits: Sequence[dict], removed=()) -> np.ndarray:
    """Replay split reports (in order) and a final removal on a membership
    vector: survivors keep their order, each parent's two children follow."""
    m = np.asarray(membership, dtype=np.int64)
    for rep in splits:
        parents = np.asarray([e["parent"] for e in rep["splits"]], dtype=np.int64)
        keep = np.ones(len(m), dtype=bool)
        keep[parents] = False
        m = np.concatenate([m[keep], np.repeat(m[parents], 2)])
    if len(removed):
        keep = np.ones(len(m), dtype=bool)
        keep[np.asarray(removed, dtype=np.int64)] = False
        m = m[keep]
    return m


def membership_masks(cloud: GaussianCloud, membership, cameras, obj_id: int) -> List[np.ndarray]:
    """Masks from compositing the 0/1 membership indicator, thresholded at 0.5."""
    lab = (np.asarray(membership) == obj_id).astype(np.float64)
    return [(render(cloud, cam, mask_labels=lab).mask > 0.5).astype(np.uint8) for cam in cameras]


def generate_scene(spec: SceneSpec) -> SyntheticScene:
    rng = np.random.default_rng(spec.seed)
    layout = get_layout(spec.layout)
    # lattice spacing from the region measure (area for flat layouts), by Monte Carlo
    dim = 2 if layout.flat else 3
    measure = 0.0
    for k, (lo, hi) in layout.boxes.items():
        probe = rng.uniform(lo, hi, (4000, 3))
        measure += float(np.prod((hi - lo)[:dim])) * float(np.mean(layout.label(probe) == k))
    spacing = (measure * (layout.layers if layout.flat else 1) / spec.n_gaussians) ** (1.0 / dim)
    true_spacing = spacing / spec.true_density ** (1.0 / dim)

    bd_spacing = None
    if layout.backdrop is not None:
        lo, hi = layout.backdrop
        bd_spacing = math.sqrt(float(np.prod((hi - lo)[:2])) / max(spec.n_backdrop, 1))
    tpos, tsc, trot, tlab, _ = _populate(layout, true_spacing, rng, 0.0, 0.15 * true_spacing)
    tbd = None if bd_spacing is None else _populate_backdrop(layout, bd_spacing / 2, rng)
    truth, tlab = _cloud_from(layout, tpos, tsc, trot, tlab, 0.92, tbd)
    cameras = make_cameras(spec)
    images = [np.clip(render(truth, cam).color, 0.0, 1.0) for cam in cameras]
    ids = sorted(layout.boxes)
    masks = {k: membership_masks(truth, tlab, cameras, k) for k in ids}
    dataset = Dataset(cameras, images, masks)

    cpos, csc, crot, clab, straddle = _populate(layout, spacing, rng, spec.overlap, 0.15 * spacing,
                                                spec.straddle_gain)
    cbd = None if bd_spacing is None else _populate_backdrop(layout, bd_spacing, rng)
    cloud, clab = _cloud_from(layout, cpos, csc, crot, clab, 0.8, cbd)
    straddle = np.concatenate([straddle, np.zeros(len(cloud) - len(straddle), dtype=bool)])
    seeded = cloud.positions.copy()
    if spec.prefit_iters_per_view > 0:
        views = train_views(len(dataset))
        iters = spec.prefit_iters_per_view * len(views)
        cfg = RefineConfig(phase_iters=iters, total_iters=2 * iters, seed=spec.seed,
                           scene_kind=spec.scene_kind, spatial_lr_scale=spec.position_lr_scale)
        cloud = texture_phase(cloud, dataset, cfg, round_index=10**6)
    # membership is the object a Gaussian was seeded in; the prefit may move
    # centers slightly out of thin regions without changing what they depict
    membership = clab.astype(np.int64)
    _restore_interface(layout, cloud, membership, straddle, seeded)
    return SyntheticScene(cloud, dataset, membership, truth, tlab.astype(np.int64), layout,
                          spec, straddle)


# ---------------------------------------------------------------- corruption


def _smooth_field(rng, shape, scale_px=6.0):
    noise = rng.standard_normal(shape)
    f = ndimage.gaussian_filter(noise, scale_px, mode="wrap")
    m = np.max(np.abs(f))
    return f / m if m > 0 else f


def corrupt_masks(masks: Sequence[np.ndarray], cspec: CorruptionSpec) -> List[np.ndarray]:
    """Per-view independent boundary corruption.

    Jitter displaces the boundary by a smooth random field bounded by
    ``jitter_px``; dilation/erosion use a cross structuring element; flips
    hit pixels adjacent to the boundary with probability ``flip_prob``.
    """
    out = []
    for v, m in enumerate(masks):
        m = np.asarray(m) > 0
        if cspec.is_identity:
            out.append(m.astype(np.uint8))
            continue
        rng = np.random.default_rng([cspec.seed, v])
        if cspec.jitter_px > 0 and m.any() and not m.all():
            sd = ndimage.distance_transform_edt(m) - ndimage.distance_transform_edt(~m)
            # sd > 0 inside; a pixel flips only when |sd| <= jitter
            u = cspec.jitter_px * _smooth_field(rng, m.shape)
            inside = np.where(m, sd - 0.5, sd + 0.5)
            m = inside + u > 0
        if cspec.dilate_px:
            m = ndimage.binary_dilation(m, iterations=int(cspec.dilate_px))
        if cspec.erode_px:
            m = ndimage.binary_erosion(m, iterations=int(cspec.erode_px), border_value=1)
        if cspec.flip_prob > 0:
            edge = ndimage.binary_dilation(m) & ~ndimage.binary_erosion(m, border_value=1)
            flip = edge & (rng.uniform(size=m.shape) < cspec.flip_prob)
            m = m ^ flip
        out.append(m.astype(np.uint8))
    return out


# ---------------------------------------------------------------- benchmark


def variant_config(base: RefineConfig, name: str) -> RefineConfig:
    flags = {
        "baseline": dict(split=False, texture=False, robustness=False),
        "+BAGS": dict(split=True, texture=False, robustness=False),
        "+BAGS+BGTR": dict(split=True, texture=True, robustness=False),
        "+BAGS+BGTR+RAEM": dict(split=True, texture=True, robustness=True),
    }
    if name not in flags:
        raise ValidationError(f"variant: expected one of {VARIANTS}, got {name!r}")
    return dataclasses.replace(base, **flags[name])


def evaluate(cloud, scene: SyntheticScene, obj_id: int, cfg: RefineConfig, removed=None) -> dict:
    ds = scene.dataset
    seg = segment(cloud, cfg, ds.cameras, scene.dataset.mask_sets[obj_id], removed=removed)
    live = cloud if removed is None or len(removed) == 0 else cloud.subset(
        np.setdiff1d(np.arange(len(cloud)), removed))
    held = heldout_views(len(ds), cfg.holdout_every)
    tr = train_views(len(ds), cfg.holdout_every)
    return {"mIoU": seg.metrics["mIoU"], "mAcc": seg.metrics["mAcc"],
            "heldout_psnr": mean_psnr(live, ds, held, cfg.background),
            "train_psnr": mean_psnr(live, ds, tr, cfg.background),
            "n_gaussians": int(len(live))}


def run_variant(scene: SyntheticScene, name: str, cfg: RefineConfig, obj_id: int = 1,
                train_dataset: Optional[Dataset] = None):
    """Refine the scene's cloud with one ablation variant; returns (row, cloud, log, wall seconds)."""
    vcfg = variant_config(cfg, name)
    ds = scene.dataset if train_dataset is None else train_dataset
    rlog = RefineLog()
    t0 = time.perf_counter()
    cloud, stats, removed = refine_object(scene.cloud, ds, obj_id, vcfg, rlog)
    wall = time.perf_counter() - t0
    row = {"variant": name, **evaluate(cloud, scene, obj_id, vcfg),
           "n_split": int(sum(p.get("n_split", 0) for p in rlog.phases)),
           "n_removed": int(len(removed))}
    return row, cloud, rlog, wall


def run_benchmark(spec: SceneSpec, cspec: Optional[CorruptionSpec], cfg: RefineConfig,
                  variants: Sequence[str] = VARIANTS, obj_id: int = 1, scene=None) -> dict:
    """Run each variant on identical inputs. The returned report holds only
    seed-determined values; wall times are under the separate ``timing`` key."""
    for v in variants:
        if v not in VARIANTS:
            raise ValidationError(f"variant: expected one of {VARIANTS}, got {v!r}")
    scene = generate_scene(spec) if scene is None else scene
    cfg = dataclasses.replace(cfg, scene_kind=spec.scene_kind) if cfg.scene_kind != spec.scene_kind else cfg
    if cfg.spatial_lr_scale is None:
        cfg = dataclasses.replace(cfg, spatial_lr_scale=spec.position_lr_scale)
    train_ds = scene.dataset
    if cspec is not None and not cspec.is_identity:
        train_ds = scene.dataset.with_masks(obj_id, corrupt_masks(scene.dataset.mask_sets[obj_id], cspec))
    rows, timing = [], {}
    for v in variants:
        row, _, _, wall = run_variant(scene, v, cfg, obj_id, train_ds)
        rows.append(row)
        timing[v] = wall
    vanilla = evaluate(scene.cloud, scene, obj_id, cfg)
    return {
        "scene": spec.to_json(),
        "corruption": None if cspec is None else cspec.to_json(),
        "config": cfg.to_json(),
        "vanilla": {"heldout_psnr": vanilla["heldout_psnr"], "train_psnr": vanilla["train_psnr"],
                    "n_gaussians": vanilla["n_gaussians"]},
        "variants": rows,
        "timing": timing,
    }


REPORT_FIELDS = ("variant", "mIoU", "mAcc", "heldout_psnr", "train_psnr", "n_gaussians",
                 "n_split", "n_removed", "wall_time_s")


def report_to_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_FIELDS)
    for row in report["variants"]:
        full = dict(row, wall_time_s=report.get("timing", {}).get(row["variant"], float("nan")))
        w.writerow([full[k] for k in REPORT_FIELDS])
    return buf.getvalue()


def write_report(report: dict, path_json, path_csv, path_timing=None) -> None:
    """report.json excludes wall times so identical seeds give identical files."""
    body = {k: v for k, v in report.items() if k != "timing"}
    with open(path_json, "w") as f:
        json.dump(body, f, indent=2, sort_keys=True)
    with open(path_csv, "w") as f:
        f.write(report_to_csv(report))
    if path_timing is not None:
        with open(path_timing, "w") as f:
            json.dump(report.get("timing", {}), f, indent=2)
