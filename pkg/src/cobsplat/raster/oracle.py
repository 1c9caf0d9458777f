"""Reference renderer: global depth sort and per-pixel compositing, no tiles.

Slow and deliberately simple; used to check the tiled renderer.
"""

from __future__ import annotations

import numpy as np

from ..scene import Camera, GaussianCloud, quat_to_rotmat, sigmoid
from ..sh import eval_colors
from .kernels import ALPHA_MAX, ALPHA_MIN, T_MIN


def reference_render(cloud: GaussianCloud, camera: Camera, background=(0.0, 0.0, 0.0),
                     mask_labels=None):
    """Returns ``(color, mask, final_transmittance, alpha_t_sum)``."""
    H, W = camera.height, camera.width
    bg = np.asarray(background, dtype=np.float64)
    labels = sigmoid(cloud.mask_logits) if mask_labels is None else np.asarray(mask_labels, float)
    rgb_all, _ = eval_colors(cloud.colors, cloud.positions, camera.center, cloud.sh_degree)
    Rc = camera.R
    jj, kk = np.mgrid[0:H, 0:W].astype(np.float64)

    entries = []
    for i in range(len(cloud)):
        t = Rc @ cloud.positions[i] + camera.translation
        if not camera.near < t[2] < camera.far:
            continue
        R = quat_to_rotmat(cloud.rotations[i])
        S = np.diag(np.exp(cloud.log_scales[i]))
        sigma = R @ S @ S @ R.T
        x, y, z = t
        J = np.array([[camera.fx / z, 0.0, -camera.fx * x / z**2],
                      [0.0, camera.fy / z, -camera.fy * y / z**2]])
        cov = J @ Rc @ sigma @ Rc.T @ J.T + 0.3 * np.eye(2)
        mean = np.array([camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy])
        entries.append((z, i, mean, np.linalg.inv(cov)))
    entries.sort(key=lambda e: (e[0], e[1]))

    color = np.zeros((H, W, 3))
    mask = np.zeros((H, W))
    wsum = np.zeros((H, W))
    T = np.ones((H, W))
    done = np.zeros((H, W), dtype=bool)
    opac = sigmoid(cloud.opacity_logits)
    for _, i, mean, Q in entries:
        dx = mean[0] - kk
        dy = mean[1] - jj
        power = -0.5 * (Q[0, 0] * dx * dx + Q[1, 1] * dy * dy) - Q[0, 1] * dx * dy
        alpha = np.minimum(ALPHA_MAX, opac[i] * np.exp(power))
        live = (~done) & (alpha >= ALPHA_MIN)
        w = np.where(live, alpha * T, 0.0)
        color += w[..., None] * rgb_all[i]
        mask += w * labels[i]
        wsum += w
        T = np.where(live, T * (1.0 - alpha), T)
        done |= T < T_MIN
    color += T[..., None] * bg
    return color, mask, T, wsum
