"""Numba tile kernels for forward compositing and the two backward passes.

Per-Gaussian gradient accumulation goes into one buffer per work chunk; chunks
own disjoint tile sets and are summed in a fixed order afterwards, so results
are reproducible for a given chunk count.
"""

from __future__ import annotations

import math
import os

import numba as nb
import numpy as np

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the TBB layer needs a newer TBB than many distributions ship; workqueue is always present
    nb.config.THREADING_LAYER = "workqueue"

TILE = 16
ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.99
T_MIN = 1e-4


@nb.njit(cache=True, inline="always")
def _alpha(dx, dy, con, o):
    power = -0.5 * (con[0] * dx * dx + con[2] * dy * dy) - con[1] * dx * dy
    g = math.exp(power)
    a = o * g
    clamped = False
    if a > ALPHA_MAX:
        a = ALPHA_MAX
        clamped = True
    return a, g, clamped


@nb.njit(cache=True, parallel=True)
def forward_kernel(ranges, plist, means, conics, opac, colors, masks, bg, width, height,
                   tiles_x, n_chunks):
    n_tiles = len(ranges) - 1
    out_color = np.zeros((height, width, 3))
    out_mask = np.zeros((height, width))
    final_t = np.ones((height, width))
    end_pos = np.zeros((height, width), dtype=np.int64)
    n_rec = np.zeros((height, width), dtype=np.int64)
    wsum = np.zeros((height, width))
    for c in nb.prange(n_chunks):
        for tile in range(c, n_tiles, n_chunks):
            ty = tile // tiles_x
            tx = tile - ty * tiles_x
            start = ranges[tile]
            stop = ranges[tile + 1]
            for j in range(ty * TILE, min((ty + 1) * TILE, height)):
                for k in range(tx * TILE, min((tx + 1) * TILE, width)):
                    T = 1.0
                    r = 0.0
                    g_ = 0.0
                    b = 0.0
                    m = 0.0
                    ws = 0.0
                    cnt = 0
                    pos = start
                    while pos < stop:
                        gi = plist[pos]
                        pos += 1
                        a, _, _ = _alpha(means[gi, 0] - k, means[gi, 1] - j, conics[gi], opac[gi])
                        if a < ALPHA_MIN:
                            continue
                        w = a * T
                        r += colors[gi, 0] * w
                        g_ += colors[gi, 1] * w
                        b += colors[gi, 2] * w
                        m += masks[gi] * w
                        ws += w
                        cnt += 1
                        T = T * (1.0 - a)
                        if T < T_MIN:
                            break
                    out_color[j, k, 0] = r + bg[0] * T
                    out_color[j, k, 1] = g_ + bg[1] * T
                    out_color[j, k, 2] = b + bg[2] * T
                    out_mask[j, k] = m
                    final_t[j, k] = T
                    end_pos[j, k] = pos
                    n_rec[j, k] = cnt
                    wsum[j, k] = ws
    return out_color, out_mask, final_t, end_pos, n_rec, wsum


@nb.njit(cache=True, parallel=True)
def backward_rgb_kernel(ranges, plist, means, conics, opac, colors, bg, width, height,
                        tiles_x, final_t, end_pos, dl_dpix, n_chunks):
    n_tiles = len(ranges) - 1
    m = len(opac)
    d_mean = np.zeros((n_chunks, m, 2))
    d_conic = np.zeros((n_chunks, m, 3))
    d_opac = np.zeros((n_chunks, m))
    d_color = np.zeros((n_chunks, m, 3))
    for c in nb.prange(n_chunks):
        for tile in range(c, n_tiles, n_chunks):
            ty = tile // tiles_x
            tx = tile - ty * tiles_x
            start = ranges[tile]
            for j in range(ty * TILE, min((ty + 1) * TILE, height)):
                for k in range(tx * TILE, min((tx + 1) * TILE, width)):
                    g0 = dl_dpix[j, k, 0]
                    g1 = dl_dpix[j, k, 1]
                    g2 = dl_dpix[j, k, 2]
                    if g0 == 0.0 and g1 == 0.0 and g2 == 0.0:
                        continue
                    T = final_t[j, k]
                    # suffix of the composite behind the current Gaussian, background included
                    s0 = bg[0] * T
                    s1 = bg[1] * T
                    s2 = bg[2] * T
                    pos = end_pos[j, k] - 1
                    while pos >= start:
                        gi = plist[pos]
                        pos -= 1
                        dx = means[gi, 0] - k
                        dy = means[gi, 1] - j
                        con = conics[gi]
                        a, gauss, clamped = _alpha(dx, dy, con, opac[gi])
                        if a < ALPHA_MIN:
                            continue
                        Ti = T / (1.0 - a)
                        w = a * Ti
                        cr = colors[gi, 0]
                        cg = colors[gi, 1]
                        cb = colors[gi, 2]
                        d_color[c, gi, 0] += w * g0
                        d_color[c, gi, 1] += w * g1
                        d_color[c, gi, 2] += w * g2
                        inv = 1.0 / (1.0 - a)
                        dl_da = (g0 * (Ti * cr - s0 * inv) + g1 * (Ti * cg - s1 * inv)
                                 + g2 * (Ti * cb - s2 * inv))
                        s0 += cr * w
                        s1 += cg * w
                        s2 += cb * w
                        T = Ti
                        if clamped:
                            continue
                        d_opac[c, gi] += dl_da * gauss
                        dl_dpow = dl_da * a
                        d_mean[c, gi, 0] += dl_dpow * (-(con[0] * dx + con[1] * dy))
                        d_mean[c, gi, 1] += dl_dpow * (-(con[1] * dx + con[2] * dy))
                        d_conic[c, gi, 0] += dl_dpow * (-0.5 * dx * dx)
                        d_conic[c, gi, 1] += dl_dpow * (-dx * dy)
                        d_conic[c, gi, 2] += dl_dpow * (-0.5 * dy * dy)
    return d_mean, d_conic, d_opac, d_color


@nb.njit(cache=True, parallel=True)
def backward_pixel_weights_kernel(ranges, plist, means, conics, opac, width, height, tiles_x,
                                  end_pos, gt, n_chunks):
    """Front-to-back pass: signed sums of alpha*T and supervision counts per Gaussian.

    ``gt`` holds 1 (positive supervision), 0 (negative) or -1 (ignored pixel).
    """
    n_tiles = len(ranges) - 1
    m = len(opac)
    d_m = np.zeros((n_chunks, m))
    n_pos = np.zeros((n_chunks, m), dtype=np.int64)
    n_neg = np.zeros((n_chunks, m), dtype=np.int64)
    for c in nb.prange(n_chunks):
        for tile in range(c, n_tiles, n_chunks):
            ty = tile // tiles_x
            tx = tile - ty * tiles_x
            start = ranges[tile]
            for j in range(ty * TILE, min((ty + 1) * TILE, height)):
                for k in range(tx * TILE, min((tx + 1) * TILE, width)):
                    label = gt[j, k]
                    if label < 0:
                        continue
                    T = 1.0
                    stop = end_pos[j, k]
                    for pos in range(start, stop):
                        gi = plist[pos]
                        a, _, _ = _alpha(means[gi, 0] - k, means[gi, 1] - j, conics[gi], opac[gi])
                        if a < ALPHA_MIN:
                            continue
                        w = a * T
                        if label == 1:
                            d_m[c, gi] -= w
                            n_pos[c, gi] += 1
                        else:
                            d_m[c, gi] += w
                            n_neg[c, gi] += 1
                        T = T * (1.0 - a)
    return d_m, n_pos, n_neg


@nb.njit(cache=True)
def records_kernel(ranges, plist, means, conics, opac, width, height, tiles_x, end_pos, n_rec):
    """Materialize every (pixel, Gaussian, alpha, T) contribution in depth order."""
    total = 0
    for j in range(height):
        for k in range(width):
            total += n_rec[j, k]
    rows = np.empty(total, dtype=np.int64)
    cols = np.empty(total, dtype=np.int64)
    src = np.empty(total, dtype=np.int64)
    alphas = np.empty(total)
    trans = np.empty(total)
    out = 0
    for j in range(height):
        for k in range(width):
            tile = (j // TILE) * tiles_x + (k // TILE)
            T = 1.0
            for pos in range(ranges[tile], end_pos[j, k]):
                gi = plist[pos]
                a, _, _ = _alpha(means[gi, 0] - k, means[gi, 1] - j, conics[gi], opac[gi])
                if a < ALPHA_MIN:
                    continue
                rows[out] = j
                cols[out] = k
                src[out] = gi
                alphas[out] = a
                trans[out] = T
                out += 1
                T = T * (1.0 - a)
    return rows, cols, src, alphas, trans
