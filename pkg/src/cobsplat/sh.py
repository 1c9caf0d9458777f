"""Real spherical-harmonic color evaluation (degree 0..3) and its adjoint."""

from __future__ import annotations

import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
      -0.4570457994644658, 1.445305721320277, -0.5900435899266435)


def sh_basis(dirs: np.ndarray, degree: int):
    """Basis values (N, K) and their gradients w.r.t. the unit direction (N, K, 3)."""
    n = len(dirs)
    k = (degree + 1) ** 2
    Y = np.zeros((n, k))
    dY = np.zeros((n, k, 3))
    Y[:, 0] = C0
    if degree < 1:
        return Y, dY
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    Y[:, 1] = -C1 * y
    Y[:, 2] = C1 * z
    Y[:, 3] = -C1 * x
    dY[:, 1, 1] = -C1
    dY[:, 2, 2] = C1
    dY[:, 3, 0] = -C1
    if degree < 2:
        return Y, dY
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    Y[:, 4] = C2[0] * xy
    Y[:, 5] = C2[1] * yz
    Y[:, 6] = C2[2] * (2 * zz - xx - yy)
    Y[:, 7] = C2[3] * xz
    Y[:, 8] = C2[4] * (xx - yy)
    dY[:, 4] = np.stack([C2[0] * y, C2[0] * x, 0 * x], 1)
    dY[:, 5] = np.stack([0 * x, C2[1] * z, C2[1] * y], 1)
    dY[:, 6] = np.stack([-2 * C2[2] * x, -2 * C2[2] * y, 4 * C2[2] * z], 1)
    dY[:, 7] = np.stack([C2[3] * z, 0 * x, C2[3] * x], 1)
    dY[:, 8] = np.stack([2 * C2[4] * x, -2 * C2[4] * y, 0 * x], 1)
    if degree < 3:
        return Y, dY
    Y[:, 9] = C3[0] * y * (3 * xx - yy)
    Y[:, 10] = C3[1] * xy * z
    Y[:, 11] = C3[2] * y * (4 * zz - xx - yy)
    Y[:, 12] = C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
    Y[:, 13] = C3[4] * x * (4 * zz - xx - yy)
    Y[:, 14] = C3[5] * z * (xx - yy)
    Y[:, 15] = C3[6] * x * (xx - 3 * yy)
    dY[:, 9] = np.stack([6 * C3[0] * xy, C3[0] * (3 * xx - 3 * yy), 0 * x], 1)
    dY[:, 10] = np.stack([C3[1] * yz, C3[1] * xz, C3[1] * xy], 1)
    dY[:, 11] = np.stack([-2 * C3[2] * xy, C3[2] * (4 * zz - xx - 3 * yy), 8 * C3[2] * yz], 1)
    dY[:, 12] = np.stack([-6 * C3[3] * xz, -6 * C3[3] * yz, C3[3] * (6 * zz - 3 * xx - 3 * yy)], 1)
    dY[:, 13] = np.stack([C3[4] * (4 * zz - 3 * xx - yy), -2 * C3[4] * xy, 8 * C3[4] * xz], 1)
    dY[:, 14] = np.stack([2 * C3[5] * xz, -2 * C3[5] * yz, C3[5] * (xx - yy)], 1)
    dY[:, 15] = np.stack([C3[6] * (3 * xx - 3 * yy), -6 * C3[6] * xy, 0 * x], 1)
    return Y, dY


def eval_colors(coeffs: np.ndarray, positions: np.ndarray, cam_center: np.ndarray, degree: int):
    """RGB per Gaussian seen from ``cam_center``.

    Returns ``(rgb, cache)``; ``cache`` feeds :func:`colors_backward`.
    Output is clamped at 0 like the reference renderer.
    """
    v = positions - cam_center
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    norm = np.where(norm > 0, norm, 1.0)
    dirs = v / norm
    Y, dY = sh_basis(dirs, degree)
    raw = np.einsum("nk,nkc->nc", Y, coeffs) + 0.5
    clamped = raw < 0
    rgb = np.where(clamped, 0.0, raw)
    return rgb, (dirs, norm, Y, dY, clamped)


def colors_backward(dL_drgb: np.ndarray, coeffs: np.ndarray, cache, degree: int):
    """Gradients w.r.t. SH coefficients (N, K, 3) and Gaussian positions (N, 3)."""
    dirs, norm, Y, dY, clamped = cache
    g = np.where(clamped, 0.0, dL_drgb)
    d_coeffs = Y[:, :, None] * g[:, None, :]
    if degree == 0:
        return d_coeffs, np.zeros_like(dirs)
    # dL/ddir = sum_k sum_c coeff[k,c] g[c] dY[k,:]
    w = np.einsum("nkc,nc->nk", coeffs, g)
    d_dir = np.einsum("nk,nkj->nj", w, dY)
    d_pos = (d_dir - dirs * np.sum(d_dir * dirs, axis=1, keepdims=True)) / norm
    return d_coeffs, d_pos
