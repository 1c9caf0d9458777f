import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cobsplat import (Camera, ContractViolation, GaussianCloud, ValidationError, backward_rgb,
                      dssim_loss, l1_loss, psnr, render, rgb_loss, ssim, step_texture)
from cobsplat.raster import RGBGrads
from cobsplat.texture import (POSITION_LR_FINAL, POSITION_LR_INIT, TextureOptState, position_lr,
                              rgb_loss_grad)

from conftest import random_camera, random_cloud


def _zero_grads(cloud):
    return RGBGrads(np.zeros_like(cloud.positions), np.zeros_like(cloud.log_scales),
                    np.zeros_like(cloud.rotations), np.zeros_like(cloud.opacity_logits),
                    np.zeros_like(cloud.colors))


def test_identity_losses_zero(rng):
    img = rng.uniform(size=(16, 16, 3))
    assert l1_loss(img, img) == 0.0
    assert dssim_loss(img, img) == 0.0
    assert rgb_loss(img, img) == 0.0
    assert ssim(img, img) == 1.0


def test_l1_black_vs_white():
    assert l1_loss(np.zeros((5, 5, 3)), np.ones((5, 5, 3))) == 1.0


def test_rgb_loss_combination(rng):
    img, gt = rng.uniform(size=(12, 12, 3)), rng.uniform(size=(12, 12, 3))
    assert rgb_loss(img, gt, 0.2) == pytest.approx(0.8 * l1_loss(img, gt) + 0.2 * dssim_loss(img, gt), abs=1e-15)
    assert 0.8 * 0.5 + 0.2 * 0.25 == pytest.approx(0.45)


def test_dimension_mismatch():
    with pytest.raises(ValidationError):
        l1_loss(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))
    with pytest.raises(ValidationError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 20), st.integers(1, 20))
def test_dssim_symmetric_and_bounded(seed, h, w):
    r = np.random.default_rng(seed)
    a, b = r.uniform(size=(h, w, 3)), r.uniform(size=(h, w, 3))
    assert dssim_loss(a, b) == pytest.approx(dssim_loss(b, a), abs=1e-12)
    assert 0.0 <= dssim_loss(a, b) <= 1.0
    assert ssim(a, a) == 1.0


def test_ssim_window_sigma():
    # a constant shift leaves the structure term at 1; only luminance changes
    img = np.full((20, 20), 0.5)
    assert ssim(img, img + 0.1) == pytest.approx((2 * 0.5 * 0.6 + 1e-4) / (0.25 + 0.36 + 1e-4), rel=1e-12)


def test_psnr_examples():
    img = np.full((8, 8, 3), 0.3)
    assert psnr(img, img) == math.inf
    assert psnr(img, img + 0.1) == pytest.approx(20.0, abs=1e-9)
    board = (np.indices((8, 8)).sum(0) % 2).astype(float)
    assert psnr(board, 1 - board) == pytest.approx(0.0, abs=1e-12)


def test_position_lr_schedule():
    assert position_lr(0, 100) == pytest.approx(POSITION_LR_INIT)
    assert position_lr(100, 100) == pytest.approx(POSITION_LR_FINAL)
    assert position_lr(50, 100) == pytest.approx(math.sqrt(POSITION_LR_INIT * POSITION_LR_FINAL))
    assert position_lr(50, 100, 2.0) == pytest.approx(2 * math.sqrt(POSITION_LR_INIT * POSITION_LR_FINAL))
    rates = [position_lr(s, 40) for s in range(41)]
    assert all(b < a for a, b in zip(rates, rates[1:]))


def test_step_texture_zero_grads_noop(rng):
    cloud = random_cloud(rng, 12)
    before = cloud.copy()
    step_texture(cloud, _zero_grads(cloud), TextureOptState(cloud, 10))
    for f in ("positions", "log_scales", "opacity_logits", "colors", "mask_logits", "obj_ids"):
        np.testing.assert_array_equal(getattr(cloud, f), getattr(before, f))
    np.testing.assert_allclose(cloud.rotations, before.rotations, atol=1e-12)


def test_step_texture_renormalizes_and_freezes_labels(rng):
    cloud = random_cloud(rng, 15)
    cam = random_camera(rng)
    ml, ids = cloud.mask_logits.copy(), cloud.obj_ids.copy()
    state = TextureOptState(cloud, 5)
    gt = rng.uniform(size=(32, 32, 3))
    for _ in range(5):
        fb = render(cloud, cam, want_backward=True)
        step_texture(cloud, backward_rgb(fb, rgb_loss_grad(fb.color, gt)[1]), state)
        assert np.all(np.abs(np.linalg.norm(cloud.rotations, axis=1) - 1) < 1e-6)
    np.testing.assert_array_equal(cloud.mask_logits, ml)
    np.testing.assert_array_equal(cloud.obj_ids, ids)


def test_step_texture_size_mismatch(rng):
    cloud = random_cloud(rng, 4)
    with pytest.raises(ContractViolation):
        step_texture(cloud, _zero_grads(cloud), TextureOptState(random_cloud(rng, 5), 10))


def test_single_gaussian_color_converges():
    cam = Camera(16, 16, 40.0, 40.0, 7.5, 7.5)
    cloud = GaussianCloud.from_rgb([[0, 0, 2.0]], 0.15, [0.2, 0.7, 0.4], 0.95)
    fb0 = render(cloud, cam)
    target = fb0.color.copy()
    cover = fb0.alpha_t_sum > 0.5
    target[cover] = [0.8, 0.3, 0.5]
    state = TextureOptState(cloud, 50, learn_geometry=False)
    losses = []
    for _ in range(50):
        fb = render(cloud, cam, want_backward=True)
        loss, dl = rgb_loss_grad(fb.color, target)
        losses.append(loss)
        step_texture(cloud, backward_rgb(fb, dl), state)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_frozen_geometry_mask_render_bit_identical(rng):
    cloud = random_cloud(rng, 25)
    cam = random_camera(rng)
    m0 = render(cloud, cam).mask.copy()
    state = TextureOptState(cloud, 8, learn_geometry=False)
    gt = rng.uniform(size=(32, 32, 3))
    for _ in range(8):
        fb = render(cloud, cam, want_backward=True)
        step_texture(cloud, backward_rgb(fb, rgb_loss_grad(fb.color, gt)[1]), state)
    assert np.array_equal(render(cloud, cam).mask, m0)
