"""Core scene types: Gaussian clouds, pinhole cameras and posed datasets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

SH_C0 = 0.28209479177387814


class ValidationError(ValueError):
    """Raised when an input violates a documented contract."""


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def rgb_to_sh(rgb):
    """Map plain RGB to the degree-0 spherical-harmonic coefficient."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


def sh_to_rgb(dc):
    return np.asarray(dc, dtype=np.float64) * SH_C0 + 0.5


def num_sh_coeffs(degree: int) -> int:
    return (degree + 1) ** 2


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (..., 4) quaternions stored as (w, x, y, z).

    Quaternions are normalized first.
    """
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`quat_to_rotmat` for a single 3x3 matrix, w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


@dataclass
class Gaussian:
    """One primitive, in storage parametrization (log-scale, logits)."""

    position: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float
    color: np.ndarray  # (K, 3) SH coefficients
    mask_logit: float = 0.0
    obj_id: int = 0

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    @property
    def mask_label(self) -> float:
        return float(sigmoid(self.mask_logit))


@dataclass
class GaussianCloud:
    """Structure-of-arrays Gaussian scene.

    ``colors`` holds SH coefficients with shape ``(N, (deg+1)**2, 3)``; the
    first coefficient is the view-independent DC term.
    """

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    mask_logits: np.ndarray
    obj_ids: np.ndarray
    sh_degree: int = 0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        k = num_sh_coeffs(self.sh_degree)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(n, k, 3)
        self.mask_logits = np.asarray(self.mask_logits, dtype=np.float64).reshape(n)
        self.obj_ids = np.asarray(self.obj_ids, dtype=np.int32).reshape(n)
        if not 0 <= self.sh_degree <= 3:
            raise ValidationError(f"sh_degree must be in 0..3, got {self.sh_degree}")

    @classmethod
    def empty(cls, sh_degree: int = 0) -> "GaussianCloud":
        k = num_sh_coeffs(sh_degree)
        return cls(
            np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0),
            np.zeros((0, k, 3)), np.zeros(0), np.zeros(0, dtype=np.int32), sh_degree,
        )

    @classmethod
    def from_rgb(cls, positions, scales, rgb, opacities, rotations=None,
                 mask_labels=None, obj_ids=None, sh_degree: int = 0) -> "GaussianCloud":
        """Build a cloud from natural-unit values (world scales, RGB, probabilities)."""
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        n = len(positions)
        scales = np.broadcast_to(np.asarray(scales, dtype=np.float64), (n, 3))
        if rotations is None:
            rotations = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        k = num_sh_coeffs(sh_degree)
        colors = np.zeros((n, k, 3))
        colors[:, 0, :] = rgb_to_sh(np.broadcast_to(rgb, (n, 3)))
        opac = np.broadcast_to(np.asarray(opacities, dtype=np.float64), (n,))
        mlog = np.zeros(n) if mask_labels is None else logit(np.broadcast_to(mask_labels, (n,)))
        ids = np.zeros(n, dtype=np.int32) if obj_ids is None else np.broadcast_to(obj_ids, (n,))
        return cls(positions, np.log(scales), rotations, logit(opac), colors, mlog, ids, sh_degree)

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(
            self.positions[i].copy(), self.log_scales[i].copy(), self.rotations[i].copy(),
            float(self.opacity_logits[i]), self.colors[i].copy(),
            float(self.mask_logits[i]), int(self.obj_ids[i]),
        )

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @property
    def mask_labels(self) -> np.ndarray:
        return sigmoid(self.mask_logits)

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            self.positions.copy(), self.log_scales.copy(), self.rotations.copy(),
            self.opacity_logits.copy(), self.colors.copy(), self.mask_logits.copy(),
            self.obj_ids.copy(), self.sh_degree,
        )

    def subset(self, index) -> "GaussianCloud":
        """New cloud holding the selected Gaussians (mask or index array)."""
        index = np.asarray(index)
        return GaussianCloud(
            self.positions[index], self.log_scales[index], self.rotations[index],
            self.opacity_logits[index], self.colors[index], self.mask_logits[index],
            self.obj_ids[index], self.sh_degree,
        )

    def concat(self, other: "GaussianCloud") -> "GaussianCloud":
        if other.sh_degree != self.sh_degree:
            raise ValidationError("cannot concatenate clouds of different sh_degree")
        return GaussianCloud(
            np.concatenate([self.positions, other.positions]),
            np.concatenate([self.log_scales, other.log_scales]),
            np.concatenate([self.rotations, other.rotations]),
            np.concatenate([self.opacity_logits, other.opacity_logits]),
            np.concatenate([self.colors, other.colors]),
            np.concatenate([self.mask_logits, other.mask_logits]),
            np.concatenate([self.obj_ids, other.obj_ids]),
            self.sh_degree,
        )

    def check_finite(self) -> None:
        for name in ("positions", "log_scales", "rotations"):
            arr = getattr(self, name)
            bad = np.flatnonzero(~np.isfinite(arr).all(axis=1))
            if len(bad):
                raise ValidationError(f"element {bad[0]}: non-finite {name}")
        norms = np.linalg.norm(self.rotations, axis=1)
        bad = np.flatnonzero(norms == 0)
        if len(bad):
            raise ValidationError(f"element {bad[0]}: zero-norm rotation")


@dataclass
class Camera:
    """Pinhole camera; the quaternion/translation pair maps world to camera.

    The camera looks down +z, with x to the right and y down in the image.
    Pixel (row j, col k) is sampled at image coordinates (k, j).
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.rotation = self.rotation / np.linalg.norm(self.rotation)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"camera size must be >= 1, got {self.width}x{self.height}")
        if not 0 < self.near < self.far:
            raise ValidationError(f"need 0 < near < far, got near={self.near} far={self.far}")
        if min(self.fx, self.fy) <= 0:
            raise ValidationError("focal lengths must be positive")

    @property
    def R(self) -> np.ndarray:
        return quat_to_rotmat(self.rotation)

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.translation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.R.T + self.translation

    @classmethod
    def look_at(cls, eye, target, width, height, focal, up=(0.0, -1.0, 0.0),
                near=0.01, far=100.0) -> "Camera":
        """Camera at ``eye`` looking at ``target``; ``up`` is world up (image -y)."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(-np.asarray(up, dtype=np.float64), fwd)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        return cls(width, height, focal, focal, (width - 1) / 2, (height - 1) / 2,
                   rotmat_to_quat(R), -R @ eye, near, far)

    def to_json(self) -> dict:
        qw, qx, qy, qz = (float(v) for v in self.rotation)
        tx, ty, tz = (float(v) for v in self.translation)
        return {"width": self.width, "height": self.height, "fx": self.fx, "fy": self.fy,
                "cx": self.cx, "cy": self.cy, "qw": qw, "qx": qx, "qy": qy, "qz": qz,
                "tx": tx, "ty": ty, "tz": tz, "near": self.near, "far": self.far}

    @classmethod
    def from_json(cls, rec: dict) -> "Camera":
        return cls(int(rec["width"]), int(rec["height"]), float(rec["fx"]), float(rec["fy"]),
                   float(rec["cx"]), float(rec["cy"]),
                   [rec["qw"], rec["qx"], rec["qy"], rec["qz"]],
                   [rec["tx"], rec["ty"], rec["tz"]], float(rec["near"]), float(rec["far"]))


@dataclass
class Dataset:
    """Posed views with RGB images and per-object binary mask sets.

    ``mask_coverage`` flags, per object and view, whether a mask exists; views
    without coverage are skipped by the refiner.
    """

    cameras: List[Camera]
    images: List[np.ndarray]
    mask_sets: Dict[int, List[np.ndarray]] = field(default_factory=dict)
    mask_coverage: Dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def __len__(self) -> int:
        return len(self.cameras)

    def validate(self) -> None:
        v = len(self.cameras)
        if len(self.images) != v:
            raise ValidationError(f"{len(self.images)} images for {v} cameras")
        for i, (cam, img) in enumerate(zip(self.cameras, self.images)):
            if img.shape != (cam.height, cam.width, 3):
                raise ValidationError(
                    f"view {i}: image {img.shape[0]}×{img.shape[1]} vs camera {cam.height}×{cam.width}")
        for oid, masks in self.mask_sets.items():
            if len(masks) != v:
                raise ValidationError(f"object {oid}: {len(masks)} masks for {v} views")
            for i, (cam, m) in enumerate(zip(self.cameras, masks)):
                if m.shape != (cam.height, cam.width):
                    raise ValidationError(
                        f"view {i}: mask {m.shape[0]}×{m.shape[1]} vs camera {cam.height}×{cam.width}")
            cov = self.mask_coverage.get(oid)
            if cov is None:
                self.mask_coverage[oid] = np.ones(v, dtype=bool)
            elif len(cov) != v:
                raise ValidationError(f"object {oid}: coverage has {len(cov)} entries for {v} views")

    def with_masks(self, obj_id: int, masks: Sequence[np.ndarray],
                   coverage: Optional[np.ndarray] = None) -> "Dataset":
        sets = dict(self.mask_sets)
        cov = dict(self.mask_coverage)
        sets[obj_id] = [np.asarray(m, dtype=np.uint8) for m in masks]
        cov[obj_id] = np.ones(len(self), dtype=bool) if coverage is None else np.asarray(coverage, bool)
        return Dataset(list(self.cameras), list(self.images), sets, cov)
