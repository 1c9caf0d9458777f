import numpy as np
import pytest

from cobsplat import backward_mask, backward_rgb, mask_loss, render
from cobsplat.texture import dssim_grad, dssim_loss, l1_grad, rgb_loss, rgb_loss_grad

from conftest import random_camera, random_cloud
from gradcheck import GROUPS, check_mask, check_rgb, fd_scene


@pytest.mark.parametrize("deg", [0, 1, 2, 3])
def test_backward_rgb_matches_fd_each_sh_degree(deg):
    rng = np.random.default_rng(40 + deg)
    cloud, cam = fd_scene(rng, n=5, sh_degree=deg)
    errs, compared, _ = check_rgb(cloud, cam, rng)
    assert compared > 0
    for g in GROUPS:
        assert errs[g] < 1e-4, (g, errs[g])


def test_backward_rgb_fd_dense_stack():
    # many overlapping high-opacity Gaussians: early termination skips are detected, not mis-scored
    rng = np.random.default_rng(7)
    cloud, cam = fd_scene(rng, n=10, sh_degree=0)
    cloud.positions *= 0.2
    cloud.opacity_logits[:] = 2.9
    errs, compared, skipped = check_rgb(cloud, cam, rng)
    assert compared >= 100
    assert max(errs.values()) < 1e-4


def test_backward_mask_matches_fd():
    for s in range(3):
        rng = np.random.default_rng(70 + s)
        cloud, cam = fd_scene(rng)
        assert check_mask(cloud, cam, rng) < 1e-4


def test_mask_loss_gradient_equals_backward_mask():
    rng = np.random.default_rng(3)
    cloud = random_cloud(rng, 20)
    cam = random_camera(rng, 24, 24)
    gt = (rng.uniform(size=(24, 24)) < 0.4).astype(np.uint8)
    fb = render(cloud, cam, want_backward=True, mask_labels=np.zeros(20))
    ana = backward_mask(fb, gt).dl_dm
    # mask_loss is linear in each label, so unit label differences are exact derivatives
    base = mask_loss(fb.mask, gt)
    for i in range(20):
        e = np.zeros(20)
        e[i] = 1.0
        num = mask_loss(render(cloud, cam, mask_labels=e).mask, gt) - base
        assert abs(ana[i] - num) < 1e-10


def test_rgb_loss_pixel_gradient_fd_16x16():
    rng = np.random.default_rng(11)
    img = rng.uniform(0.1, 0.9, (16, 16, 3))
    gt = rng.uniform(0.1, 0.9, (16, 16, 3))
    loss, g = rgb_loss_grad(img, gt, 0.2)
    assert loss == pytest.approx(rgb_loss(img, gt, 0.2), abs=1e-15)
    h = 1e-6
    for idx in [tuple(rng.integers(0, 16, 2)) + (int(rng.integers(0, 3)),) for _ in range(40)]:
        p, m = img.copy(), img.copy()
        p[idx] += h
        m[idx] -= h
        num = (rgb_loss(p, gt) - rgb_loss(m, gt)) / (2 * h)
        assert abs(num - g[idx]) < 1e-5


def test_dssim_gradient_fd_grayscale():
    rng = np.random.default_rng(12)
    img, gt = rng.uniform(size=(12, 16)), rng.uniform(size=(12, 16))
    g = dssim_grad(img, gt)
    h = 1e-6
    for j, k in [(0, 0), (5, 7), (11, 15), (3, 12)]:
        p, m = img.copy(), img.copy()
        p[j, k] += h
        m[j, k] -= h
        assert abs((dssim_loss(p, gt) - dssim_loss(m, gt)) / (2 * h) - g[j, k]) < 1e-8


def test_l1_grad_is_sign_over_size():
    img = np.array([[0.2, 0.8]])
    gt = np.array([[0.5, 0.5]])
    np.testing.assert_array_equal(l1_grad(img, gt), [[-0.5, 0.5]])


def test_backward_rgb_through_photometric_loss():
    # end-to-end: the scheduler feeds rgb_loss_grad into backward_rgb
    rng = np.random.default_rng(21)
    cloud, cam = fd_scene(rng, n=6, sh_degree=0)
    gt = rng.uniform(size=(cam.height, cam.width, 3))
    fb = render(cloud, cam, want_backward=True)
    _, dl = rgb_loss_grad(fb.color, gt)
    g = backward_rgb(fb, dl).colors
    h = 1e-6
    for i in range(len(cloud)):
        for c in range(3):
            keep = cloud.colors[i, 0, c]
            cloud.colors[i, 0, c] = keep + h
            lp = rgb_loss(render(cloud, cam).color, gt)
            cloud.colors[i, 0, c] = keep - h
            lm = rgb_loss(render(cloud, cam).color, gt)
            cloud.colors[i, 0, c] = keep
            num = (lp - lm) / (2 * h)
            assert abs(num - g[i, 0, c]) <= 1e-4 * max(abs(num), 1e-6)
