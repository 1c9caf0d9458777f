"""Photometric loss (L1 + D-SSIM) with analytic pixel gradients, PSNR, and the
per-group Adam optimizer used during texture phases."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .optim import Adam
from .raster import ContractViolation, RGBGrads
from .scene import GaussianCloud, ValidationError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
DEFAULT_LAMBDA = 0.2

POSITION_LR_INIT = 1.6e-4
POSITION_LR_FINAL = 1.6e-6
COLOR_LR = 2.5e-3
OPACITY_LR = 5e-2
SCALE_LR = 5e-3
ROTATION_LR = 1e-3


def _check_dims(img, gt):
    if np.shape(img) != np.shape(gt):
        raise ValidationError(f"dimension mismatch: {np.shape(img)} vs {np.shape(gt)}")


@lru_cache(maxsize=32)
def _filter_matrix(n: int) -> np.ndarray:
    """1D Gaussian blur with reflect padding, written as an n x n matrix."""
    r = SSIM_WINDOW // 2
    x = np.arange(SSIM_WINDOW) - r
    w = np.exp(-(x ** 2) / (2 * SSIM_SIGMA ** 2))
    w /= w.sum()
    src = np.pad(np.arange(n), r, mode="reflect") if n > 1 else np.zeros(n + 2 * r, dtype=int)
    A = np.zeros((n, n))
    for k in range(SSIM_WINDOW):
        np.add.at(A, (np.arange(n), src[np.arange(n) + k]), w[k])
    A.setflags(write=False)
    return A


def _blur(X: np.ndarray, Ah: np.ndarray, Aw: np.ndarray) -> np.ndarray:
    # X is H x W x C; separable filter along rows and columns
    return (Ah @ X.transpose(2, 0, 1) @ Aw.T).transpose(1, 2, 0)


def _blur_adjoint(G: np.ndarray, Ah: np.ndarray, Aw: np.ndarray) -> np.ndarray:
    return (Ah.T @ G.transpose(2, 0, 1) @ Aw).transpose(1, 2, 0)


def _as_hwc(img):
    img = np.asarray(img, dtype=np.float64)
    return img[..., None] if img.ndim == 2 else img


def ssim_map(img, gt):
    x, y = _as_hwc(img), _as_hwc(gt)
    Ah, Aw = _filter_matrix(x.shape[0]), _filter_matrix(x.shape[1])
    mx, my = _blur(x, Ah, Aw), _blur(y, Ah, Aw)
    exx, eyy, exy = _blur(x * x, Ah, Aw), _blur(y * y, Ah, Aw), _blur(x * y, Ah, Aw)
    a1 = 2 * mx * my + SSIM_C1
    a2 = 2 * (exy - mx * my) + SSIM_C2
    b1 = mx * mx + my * my + SSIM_C1
    b2 = (exx - mx * mx) + (eyy - my * my) + SSIM_C2
    s = (a1 * a2) / (b1 * b2)
    return s, (x, y, mx, my, a1, a2, b1, b2, Ah, Aw)


def ssim(img, gt) -> float:
    _check_dims(img, gt)
    return float(ssim_map(img, gt)[0].mean())


def l1_loss(img, gt) -> float:
    _check_dims(img, gt)
    return float(np.mean(np.abs(np.asarray(img, float) - np.asarray(gt, float))))


def dssim_loss(img, gt) -> float:
    _check_dims(img, gt)
    return 0.5 * (1.0 - ssim(img, gt))


def rgb_loss(img, gt, lam: float = DEFAULT_LAMBDA) -> float:
    return (1.0 - lam) * l1_loss(img, gt) + lam * dssim_loss(img, gt)


def l1_grad(img, gt) -> np.ndarray:
    d = np.asarray(img, float) - np.asarray(gt, float)
    return np.sign(d) / d.size


def dssim_grad(img, gt) -> np.ndarray:
    """d(dssim)/d(img), same shape as ``img``."""
    return _dssim_value_grad(img, gt)[1]


def _dssim_value_grad(img, gt):
    _check_dims(img, gt)
    s, (x, y, mx, my, a1, a2, b1, b2, Ah, Aw) = ssim_map(img, gt)
    g = -0.5 / s.size * s
    g_mu = g * (2 * my / a1 - 2 * my / a2 - 2 * mx / b1 + 2 * mx / b2)
    g_exx = -g / b2
    g_exy = 2 * g / a2
    out = (_blur_adjoint(g_mu, Ah, Aw) + 2 * x * _blur_adjoint(g_exx, Ah, Aw)
           + y * _blur_adjoint(g_exy, Ah, Aw))
    return 0.5 * (1.0 - float(s.mean())), out.reshape(np.shape(img))


def rgb_loss_grad(img, gt, lam: float = DEFAULT_LAMBDA):
    """Returns ``(loss, dloss/dimg)``."""
    d, gd = _dssim_value_grad(img, gt)
    loss = (1.0 - lam) * l1_loss(img, gt) + lam * d
    grad = (1.0 - lam) * l1_grad(img, gt) + lam * gd
    return loss, grad


def psnr(img, gt) -> float:
    _check_dims(img, gt)
    mse = float(np.mean((np.asarray(img, float) - np.asarray(gt, float)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def position_lr(step: int, max_steps: int, spatial_scale: float = 1.0) -> float:
    """Log-linear decay from the initial to the final position rate."""
    t = 1.0 if max_steps <= 0 else min(max(step / max_steps, 0.0), 1.0)
    lr = math.exp((1 - t) * math.log(POSITION_LR_INIT) + t * math.log(POSITION_LR_FINAL))
    return lr * spatial_scale


class TextureOptState:
    """Adam buffers per attribute group for one texture phase.

    ``max_steps`` sets the position-rate decay horizon; ``spatial_scale``
    multiplies the position rate (scene extent). When ``learn_geometry`` is
    off only colors move, so coverage and mask renders stay fixed.
    """

    def __init__(self, cloud: GaussianCloud, max_steps: int, spatial_scale: float = 1.0,
                 learn_geometry: bool = True):
        n = len(cloud)
        self.n = n
        self.max_steps = int(max_steps)
        self.spatial_scale = float(spatial_scale)
        self.learn_geometry = bool(learn_geometry)
        self.step_count = 0
        self.groups = {
            "positions": Adam(cloud.positions.shape, POSITION_LR_INIT),
            "colors": Adam(cloud.colors.shape, COLOR_LR),
            "opacity_logits": Adam(cloud.opacity_logits.shape, OPACITY_LR),
            "log_scales": Adam(cloud.log_scales.shape, SCALE_LR),
            "rotations": Adam(cloud.rotations.shape, ROTATION_LR),
        }

    def __len__(self) -> int:
        return self.n


def step_texture(cloud: GaussianCloud, grads: RGBGrads, state: TextureOptState) -> GaussianCloud:
    """One Adam step on every enabled group; mask_logit and obj_id never move."""
    if len(state) != len(cloud):
        raise ContractViolation(f"texture state tracks {len(state)} Gaussians, cloud has {len(cloud)}")
    names = ["colors"]
    if state.learn_geometry:
        names += ["positions", "opacity_logits", "log_scales", "rotations"]
    for name in names:
        lr = None
        if name == "positions":
            lr = position_lr(state.step_count, state.max_steps, state.spatial_scale)
        state.groups[name].step(getattr(cloud, name), getattr(grads, name), lr)
    state.step_count += 1
    q = cloud.rotations
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return cloud
