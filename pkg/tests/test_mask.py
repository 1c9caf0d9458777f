import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cobsplat import (Camera, ContractViolation, GaussianCloud, ValidationError, accumulate_view,
                      backward_mask, mask_loss, mask_sig, render, select_boundary, split_boundary)
from cobsplat.mask import (BoundarySet, MaskOptState, MaskStats, footprint_px, step_mask_logits)
from cobsplat.raster import MaskBackward
from cobsplat.scene import quat_to_rotmat, sigmoid

from conftest import random_cloud


def _mb(pos, neg):
    pos, neg = np.asarray(pos), np.asarray(neg)
    return MaskBackward(np.zeros(len(pos)), pos, neg)


# ---------------------------------------------------------------- loss


def test_mask_loss_zero_render():
    assert mask_loss(np.zeros((4, 4)), np.eye(4)) == 0.0


def test_mask_loss_single_pixel_sign():
    assert mask_loss(np.array([[0.7]]), np.array([[1]])) == pytest.approx(-0.7, abs=1e-15)
    assert mask_loss(np.array([[0.7]]), np.array([[0]])) == pytest.approx(0.7, abs=1e-15)


def test_mask_loss_valid_and_dims():
    r = np.full((2, 2), 0.5)
    assert mask_loss(r, np.ones((2, 2)), valid=np.array([[1, 0], [0, 0]], bool)) == -0.5
    with pytest.raises(ValidationError):
        mask_loss(r, np.ones((3, 2)))


# ---------------------------------------------------------------- mask_sig


def test_mask_sig_examples():
    assert mask_sig(3, 1, 1e-6) == pytest.approx(2 / (4 + 1e-6), rel=1e-15)
    assert float(mask_sig(3, 1, 1e-6)) == pytest.approx(0.4999999, abs=1e-7)
    assert mask_sig(5, 5, 1e-6) == 0.0
    assert float(mask_sig(7, 0, 1e-6)) == pytest.approx(0.99999986, abs=1e-8)
    assert mask_sig(0, 0) == 0.0


def test_mask_sig_rejects_negative():
    with pytest.raises(ValidationError):
        mask_sig(-1, 2)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 10**6), st.floats(1e-9, 1e-3))
def test_mask_sig_range_and_symmetry(a, b, eps):
    s = float(mask_sig(a, b, eps))
    assert 0.0 <= s <= 1.0
    assert s == float(mask_sig(b, a, eps))


# ---------------------------------------------------------------- accumulation


def test_interior_gaussian_five_views_mean_sig_one():
    cloud = GaussianCloud.from_rgb([[0, 0, 0]], 0.05, 0.5, 0.9)
    stats = MaskStats.zeros(1)
    for v in range(5):
        cam = Camera.look_at([0.3 * (v - 2), 0.1 * v, -3.0], [0, 0, 0], 24, 24, 30.0)
        fb = render(cloud, cam, want_backward=True)
        accumulate_view(stats, backward_mask(fb, np.ones((24, 24), np.uint8)))
    assert stats.observed_views[0] == 5
    assert abs(stats.mean_sig[0] - 1.0) < 1e-6


def test_unobserved_gaussian_reads_as_one():
    stats = MaskStats.zeros(2)
    accumulate_view(stats, _mb([0, 3], [0, 0]))
    assert stats.observed_views.tolist() == [0, 1]
    assert stats.mean_sig[0] == 1.0


def test_balanced_straddler_mean_sig_zero():
    stats = MaskStats.zeros(1)
    for _ in range(4):
        accumulate_view(stats, _mb([4], [4]))
    assert stats.mean_sig[0] == 0.0 and stats.observed_views[0] == 4


def test_accumulate_size_mismatch():
    with pytest.raises(ContractViolation):
        accumulate_view(MaskStats.zeros(3), _mb([1, 1], [0, 0]))


def test_mean_sig_bounds_after_accumulation(rng):
    stats = MaskStats.zeros(50)
    for _ in range(8):
        accumulate_view(stats, _mb(rng.integers(0, 5, 50), rng.integers(0, 5, 50)))
    assert np.all((stats.mean_sig >= 0) & (stats.mean_sig <= 1))
    assert np.all(stats.observed_views <= 8)


# ---------------------------------------------------------------- selection


def _stats_with(mean_sig, obs=1):
    n = len(mean_sig)
    return MaskStats(np.asarray(mean_sig, float) * obs, np.full(n, obs), np.full(n, 4.0))


def test_select_boundary_example():
    b = select_boundary(_stats_with([0.1, 0.9, 0.49]), 0.5)
    assert b.indices.tolist() == [0, 2]
    assert b.selected_threshold == 0.5
    assert np.all(b.mean_sig < 0.5)


def test_select_boundary_delta_zero():
    assert len(select_boundary(_stats_with([0.0, 0.3]), 0.0)) == 0


def test_select_boundary_skips_unobserved():
    s = MaskStats(np.zeros(2), np.array([0, 1]), np.zeros(2))
    assert select_boundary(s, 0.99).indices.tolist() == [1]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0, 1), st.floats(0, 1))
def test_select_boundary_monotone_in_delta(ms, d1, d2):
    lo, hi = sorted((d1, d2))
    s = _stats_with(ms, obs=3)
    assert set(select_boundary(s, lo).indices) <= set(select_boundary(s, hi).indices)


# ---------------------------------------------------------------- footprint


def test_footprint_median_view():
    cloud = GaussianCloud.from_rgb([[0, 0, 0]], [0.1, 0.05, 0.02], 0.5, 0.9)
    cams = [Camera.look_at([0, 0, -d], [0, 0, 0], 16, 16, 20.0) for d in (2.0, 4.0, 8.0)]
    assert footprint_px(cloud, cams)[0] == pytest.approx(3 * 0.1 * 20.0 / 4.0)
    behind = GaussianCloud.from_rgb([[0, 0, -10.0]], 0.1, 0.5, 0.9)
    assert footprint_px(behind, cams)[0] == 0.0


# ---------------------------------------------------------------- splitting


def _bset(idx, fp=10.0):
    idx = np.asarray(idx)
    return BoundarySet(idx, 0.5, np.full(len(idx), 0.2), np.full(len(idx), 3), np.full(len(idx), fp))


def test_split_three_of_hundred(rng):
    cloud = random_cloud(rng, 100)
    new, rep = split_boundary(cloud, _bset([4, 50, 99]), 1.0, rng_seed=0)
    assert len(new) == 103
    assert rep.parents == [4, 50, 99]
    assert rep.children == [[97, 98], [99, 100], [101, 102]]
    js = rep.to_json()
    assert js["splits"][1] == {"parent": 50, "children": [99, 100], "views": 3, "mean_sig": 0.2}


def test_split_child_attributes(rng):
    cloud = random_cloud(rng, 10)
    new, rep = split_boundary(cloud, _bset([3]), 1.0, rng_seed=5)
    for c in rep.children[0]:
        np.testing.assert_allclose(new.log_scales[c], cloud.log_scales[3] - math.log(1.6), rtol=0, atol=1e-15)
        for f in ("rotations", "opacity_logits", "colors", "obj_ids", "mask_logits"):
            np.testing.assert_array_equal(getattr(new, f)[c], getattr(cloud, f)[3])
    keep = [i for i in range(10) if i != 3]
    for f in ("positions", "log_scales", "rotations", "opacity_logits", "colors", "obj_ids", "mask_logits"):
        np.testing.assert_array_equal(getattr(new, f)[:9], getattr(cloud, f)[keep])


def test_split_excludes_small(rng):
    cloud = random_cloud(rng, 6)
    b = BoundarySet(np.array([1, 2]), 0.5, np.zeros(2), np.ones(2, int), np.array([0.5, 3.0]))
    new, rep = split_boundary(cloud, b, 1.0)
    assert rep.parents == [2] and rep.excluded_small == [1] and len(new) == 7


def test_split_sample_mean_matches_parent():
    n = 5000
    q = np.array([0.8, 0.2, -0.4, 0.3])
    q /= np.linalg.norm(q)
    s = np.array([0.3, 0.1, 0.05])
    cloud = GaussianCloud.from_rgb(np.tile([1.0, -2.0, 0.5], (n, 1)), s, 0.5, 0.7,
                                   rotations=np.tile(q, (n, 1)))
    new, rep = split_boundary(cloud, _bset(np.arange(n)), 1.0, rng_seed=9)
    kids = new.positions
    assert len(kids) == 2 * n
    R = quat_to_rotmat(q)
    cov = R @ np.diag(s ** 2) @ R.T
    sd = np.sqrt(np.diag(cov))
    assert np.all(np.abs(kids.mean(0) - [1.0, -2.0, 0.5]) < 3 * sd / math.sqrt(len(kids)))
    np.testing.assert_allclose(np.cov(kids.T), cov, atol=0.1 * s[0] ** 2)


def test_split_seeded_and_out_of_range(rng):
    cloud = random_cloud(rng, 8)
    a, _ = split_boundary(cloud, _bset([0, 5]), 1.0, rng_seed=3)
    b, _ = split_boundary(cloud, _bset([0, 5]), 1.0, rng_seed=3)
    np.testing.assert_array_equal(a.positions, b.positions)
    with pytest.raises(ContractViolation):
        split_boundary(cloud, _bset([8]), 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 40))
def test_split_invariants_property(seed, n):
    r = np.random.default_rng(seed)
    cloud = random_cloud(r, n)
    members = np.flatnonzero(r.uniform(size=n) < 0.4)
    fp = r.uniform(0, 3, len(members))
    b = BoundarySet(members, 0.5, np.zeros(len(members)), np.ones(len(members), int), fp)
    new, rep = split_boundary(cloud, b, 1.0, rng_seed=seed)
    assert len(new) == n + rep.n_split
    assert set(new.obj_ids.tolist()) == set(cloud.obj_ids.tolist())
    survivors = np.setdiff1d(np.arange(n), rep.parents)
    idx = rep.new_index_of(n)
    for f in ("positions", "log_scales", "rotations", "opacity_logits", "colors", "mask_logits"):
        np.testing.assert_array_equal(getattr(new, f)[idx[survivors]], getattr(cloud, f)[survivors])


# ---------------------------------------------------------------- logit optimizer


def test_step_mask_zero_gradient():
    cloud = GaussianCloud.from_rgb(np.zeros((3, 3)), 0.1, 0.5, 0.5, mask_labels=[0.2, 0.5, 0.9])
    before = cloud.mask_logits.copy()
    step_mask_logits(cloud, np.zeros(3), MaskOptState(3))
    np.testing.assert_array_equal(cloud.mask_logits, before)


def test_step_mask_first_adam_step():
    cloud = GaussianCloud.from_rgb(np.zeros((1, 3)), 0.1, 0.5, 0.5)
    pos_before = cloud.positions.copy()
    step_mask_logits(cloud, np.array([-0.3]), MaskOptState(1))
    # scalar reference: g = -0.3 * 0.25, m = 0.1 g / 0.1, v = 0.001 g^2 / 0.001
    g = -0.3 * 0.25
    m_hat = (0.1 * g) / (1 - 0.9)
    v_hat = (0.001 * g * g) / (1 - 0.999)
    assert cloud.mask_logits[0] == pytest.approx(-0.1 * m_hat / (math.sqrt(v_hat) + 1e-15), abs=1e-15)
    assert cloud.mask_logits[0] == pytest.approx(0.1, abs=1e-12)
    np.testing.assert_array_equal(cloud.positions, pos_before)


def test_step_mask_size_mismatch():
    cloud = GaussianCloud.from_rgb(np.zeros((2, 3)), 0.1, 0.5, 0.5)
    with pytest.raises(ContractViolation):
        step_mask_logits(cloud, np.zeros(2), MaskOptState(3))


def test_positive_supervision_drives_label_up_monotonically():
    cam = Camera(1, 1, 10.0, 10.0, 0.0, 0.0)
    cloud = GaussianCloud.from_rgb([[0, 0, 2.0]], 0.05, 0.5, 0.6)
    opt = MaskOptState(1)
    # scalar oracle of the same Adam recursion
    x, m1, v1 = 0.0, 0.0, 0.0
    labels = []
    for t in range(1, 61):
        fb = render(cloud, cam, want_backward=True)
        step_mask_logits(cloud, backward_mask(fb, np.ones((1, 1))).dl_dm, opt)
        s = 1 / (1 + math.exp(-x))
        g = -0.6 * s * (1 - s)
        m1 = 0.9 * m1 + 0.1 * g
        v1 = 0.999 * v1 + 0.001 * g * g
        x -= 0.1 * (m1 / (1 - 0.9 ** t)) / (math.sqrt(v1 / (1 - 0.999 ** t)) + 1e-15)
        assert cloud.mask_logits[0] == pytest.approx(x, abs=1e-12)
        labels.append(float(sigmoid(cloud.mask_logits[0])))
    assert all(b > a for a, b in zip(labels, labels[1:]))
    assert labels[-1] > 0.95
