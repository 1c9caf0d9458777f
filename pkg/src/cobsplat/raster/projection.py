"""EWA projection of 3D Gaussians to screen space, and the adjoint chain."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..scene import Camera, GaussianCloud, quat_to_rotmat, sigmoid
from ..sh import colors_backward, eval_colors
from .kernels import ALPHA_MIN, TILE

DILATION = 0.3


@dataclass(frozen=True)
class Projected2D:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    source_index: int


class Projection(Sequence):
    """Screen-space data for the Gaussians surviving culling.

    Arrays are indexed by position in the projection; ``source`` maps back to
    cloud indices. Behaves as a sequence of :class:`Projected2D`.
    """

    def __init__(self, **arrays):
        self.__dict__.update(arrays)

    def __len__(self) -> int:
        return len(self.source)

    def __getitem__(self, i):
        return Projected2D(self.means.copy()[i], self.cov2d[i].copy(), float(self.depths[i]),
                           int(self.source[i]))


def project(cloud: GaussianCloud, camera: Camera) -> Projection:
    """Project and cull. Culled: depth outside (near, far), opacity below the
    contribution cutoff, or a support rectangle with no pixel in the frame."""
    W = camera.R
    t_cam = cloud.positions @ W.T + camera.translation
    z = t_cam[:, 2]
    opac_all = sigmoid(cloud.opacity_logits)
    keep = (z > camera.near) & (z < camera.far) & (opac_all >= ALPHA_MIN)
    idx = np.flatnonzero(keep)
    t = t_cam[idx]
    x, y, z = t[:, 0], t[:, 1], t[:, 2]
    fx, fy = camera.fx, camera.fy

    R = quat_to_rotmat(cloud.rotations[idx])
    s = np.exp(cloud.log_scales[idx])
    M = R * s[:, None, :]
    sigma3 = M @ np.swapaxes(M, 1, 2)
    J = np.zeros((len(idx), 2, 3))
    J[:, 0, 0] = fx / z
    J[:, 0, 2] = -fx * x / (z * z)
    J[:, 1, 1] = fy / z
    J[:, 1, 2] = -fy * y / (z * z)
    T = J @ W
    cov = T @ sigma3 @ np.swapaxes(T, 1, 2)
    cov[:, 0, 0] += DILATION
    cov[:, 1, 1] += DILATION
    a, b, c = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    det = a * c - b * b
    conics = np.stack([c / det, -b / det, a / det], axis=1)
    means = np.stack([fx * x / z + camera.cx, fy * y / z + camera.cy], axis=1)

    # Pixels with alpha >= cutoff satisfy |d|^2 <= 2 ln(255 o) * lambda_max.
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    o = opac_all[idx]
    radius = np.sqrt(2.0 * np.log(np.maximum(o / ALPHA_MIN, 1.0)) * lam_max) + 1e-6
    kmin = np.maximum(np.floor(means[:, 0] - radius), 0).astype(np.int64)
    kmax = np.minimum(np.ceil(means[:, 0] + radius), camera.width - 1).astype(np.int64)
    jmin = np.maximum(np.floor(means[:, 1] - radius), 0).astype(np.int64)
    jmax = np.minimum(np.ceil(means[:, 1] + radius), camera.height - 1).astype(np.int64)
    ok = (kmin <= kmax) & (jmin <= jmax) & np.isfinite(radius)

    rgb, sh_cache = eval_colors(cloud.colors[idx], cloud.positions[idx], camera.center,
                                cloud.sh_degree)
    sel = np.flatnonzero(ok)
    sh_cache = tuple(arr[sel] for arr in sh_cache)
    return Projection(
        source=idx[sel], means=np.ascontiguousarray(means[sel]), cov2d=cov[sel],
        conics=np.ascontiguousarray(conics[sel]), depths=z[sel], opacities=o[sel],
        colors=np.ascontiguousarray(rgb[sel]), radius=radius[sel],
        rect=np.stack([kmin, kmax, jmin, jmax], axis=1)[sel],
        t_cam=t[sel], R=R[sel], scales=s[sel], sigma3=sigma3[sel], J=J[sel], T=T[sel],
        sh_cache=sh_cache, camera=camera,
    )


def bin_tiles(proj: Projection, width: int, height: int):
    """Duplicate each Gaussian into the tiles its support rectangle touches and
    sort by (tile, depth, cloud index). Returns ``(ranges, plist, tiles_x)``."""
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    n_tiles = tiles_x * tiles_y
    if len(proj) == 0:
        return np.zeros(n_tiles + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), tiles_x
    tx0 = proj.rect[:, 0] // TILE
    tx1 = proj.rect[:, 1] // TILE
    ty0 = proj.rect[:, 2] // TILE
    ty1 = proj.rect[:, 3] // TILE
    nx = tx1 - tx0 + 1
    ny = ty1 - ty0 + 1
    counts = nx * ny
    owner = np.repeat(np.arange(len(proj)), counts)
    offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    tile_x = tx0[owner] + offsets % nx[owner]
    tile_y = ty0[owner] + offsets // nx[owner]
    tile = tile_y * tiles_x + tile_x
    order = np.lexsort((proj.source[owner], proj.depths[owner], tile))
    plist = owner[order].astype(np.int64)
    ranges = np.searchsorted(tile[order], np.arange(n_tiles + 1)).astype(np.int64)
    return ranges, plist, tiles_x


def projection_backward(cloud: GaussianCloud, proj: Projection, d_means, d_conics, d_opac,
                        d_colors):
    """Chain screen-space gradients back to the cloud's storage parameters.

    Returns a dict of full-size gradient arrays keyed by attribute name.
    """
    cam = proj.camera
    n = len(cloud)
    out = {
        "positions": np.zeros((n, 3)), "log_scales": np.zeros((n, 3)),
        "rotations": np.zeros((n, 4)), "opacity_logits": np.zeros(n),
        "colors": np.zeros_like(cloud.colors),
    }
    if len(proj) == 0:
        return out
    src = proj.source
    fx, fy = cam.fx, cam.fy
    x, y, z = proj.t_cam[:, 0], proj.t_cam[:, 1], proj.t_cam[:, 2]
    W = cam.R

    # conic -> 2D covariance; symmetric-matrix gradients carry half the
    # off-diagonal derivative in each off-diagonal slot.
    Gq = np.empty((len(proj), 2, 2))
    Gq[:, 0, 0] = d_conics[:, 0]
    Gq[:, 0, 1] = Gq[:, 1, 0] = 0.5 * d_conics[:, 1]
    Gq[:, 1, 1] = d_conics[:, 2]
    Q = np.empty_like(Gq)
    Q[:, 0, 0] = proj.conics[:, 0]
    Q[:, 0, 1] = Q[:, 1, 0] = proj.conics[:, 1]
    Q[:, 1, 1] = proj.conics[:, 2]
    Gc = -Q @ Gq @ Q

    T = proj.T
    sigma3 = proj.sigma3
    G_sigma = np.swapaxes(T, 1, 2) @ Gc @ T
    G_T = 2.0 * Gc @ T @ sigma3
    G_J = G_T @ W.T

    d_t = np.zeros((len(proj), 3))
    d_t[:, 0] += d_means[:, 0] * fx / z
    d_t[:, 1] += d_means[:, 1] * fy / z
    d_t[:, 2] += -d_means[:, 0] * fx * x / (z * z) - d_means[:, 1] * fy * y / (z * z)
    d_t[:, 0] += G_J[:, 0, 2] * (-fx / (z * z))
    d_t[:, 1] += G_J[:, 1, 2] * (-fy / (z * z))
    d_t[:, 2] += (G_J[:, 0, 0] * (-fx / (z * z)) + G_J[:, 0, 2] * (2 * fx * x / z ** 3)
                  + G_J[:, 1, 1] * (-fy / (z * z)) + G_J[:, 1, 2] * (2 * fy * y / z ** 3))
    d_pos = d_t @ W

    R = proj.R
    s = proj.scales
    M = R * s[:, None, :]
    G_M = 2.0 * G_sigma @ M
    d_s = np.einsum("nij,nij->nj", R, G_M)
    out["log_scales"][src] = d_s * s
    G_R = G_M * s[:, None, :]
    out["rotations"][src] = _quat_backward(cloud.rotations[src], G_R)

    o = proj.opacities
    out["opacity_logits"][src] = d_opac * o * (1.0 - o)

    d_coeffs, d_pos_sh = colors_backward(d_colors, cloud.colors[src], proj.sh_cache,
                                         cloud.sh_degree)
    out["colors"][src] = d_coeffs
    out["positions"][src] = d_pos + d_pos_sh
    return out


def _quat_backward(q_raw: np.ndarray, G: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(q_raw, axis=1, keepdims=True)
    q = q_raw / norm
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = lambda i, j: G[:, i, j]  # noqa: E731
    dw = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1))
    dx = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2)
              + z * g(2, 0) + w * g(2, 1) - 2 * x * g(2, 2))
    dy = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
              - w * g(2, 0) + z * g(2, 1) - 2 * y * g(2, 2))
    dz = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1)
              + y * g(1, 2) + x * g(2, 0) + y * g(2, 1))
    dq = np.stack([dw, dx, dy, dz], axis=1)
    return (dq - q * np.sum(dq * q, axis=1, keepdims=True)) / norm
