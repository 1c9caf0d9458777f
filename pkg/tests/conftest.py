"""Shared fixtures and helpers.

Every call to ``render`` anywhere in the suite goes through a wrapper that
checks the per-pixel compositing bounds (0 <= mask < 1 and
T_final + sum(alpha*T) <= 1 + 1e-6); the totals are summarised by the
acceptance suite.
"""

import sys

import numpy as np
import pytest

import cobsplat
import cobsplat.raster
from cobsplat import Camera, GaussianCloud

BOUNDS = {"views": 0, "pixels": 0, "violations": [], "max_excess": 0.0, "mask_max": 0.0}

_orig_render = sys.modules["cobsplat.raster.render"].render


def check_bounds(fb, where="render"):
    mask, T, w = fb.mask, fb.final_transmittance, fb.alpha_t_sum
    excess = float(np.max(T + w - 1.0)) if T.size else 0.0
    ok = (T.size == 0) or (np.all(mask >= 0.0) and np.all(mask < 1.0)
                           and np.all(T >= 0.0) and excess <= 1e-6)
    BOUNDS["views"] += 1
    BOUNDS["pixels"] += int(T.size)
    if T.size:
        BOUNDS["max_excess"] = max(BOUNDS["max_excess"], excess)
        BOUNDS["mask_max"] = max(BOUNDS["mask_max"], float(mask.max()))
    if not ok:
        BOUNDS["violations"].append(where)
    return ok


def _checked_render(*args, **kwargs):
    fb = _orig_render(*args, **kwargs)
    assert check_bounds(fb), "compositing bounds violated"
    return fb


_checked_render.__doc__ = _orig_render.__doc__
_checked_render.__wrapped__ = _orig_render

for _name in ("cobsplat.raster.render", "cobsplat.raster", "cobsplat", "cobsplat.refine",
              "cobsplat.synth", "cobsplat.cli"):
    __import__(_name)
    setattr(sys.modules[_name], "render", _checked_render)


# ---------------------------------------------------------------- builders


def simple_camera(w=32, h=32, f=40.0, eye=(0.0, 0.0, -4.0), target=(0.0, 0.0, 0.0)):
    return Camera.look_at(eye, target, w, h, f)


def random_cloud(rng, n, sh_degree=0, spread=0.6, scale=(0.04, 0.25), mask=True, depth=0.0):
    pos = rng.uniform(-spread, spread, (n, 3))
    pos[:, 2] += depth
    k = (sh_degree + 1) ** 2
    colors = rng.normal(0, 0.4, (n, k, 3))
    colors[:, 0] = rng.uniform(-1.2, 1.2, (n, 3))
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return GaussianCloud(
        pos, np.log(rng.uniform(*scale, (n, 3))), q, rng.uniform(-1.0, 2.5, n), colors,
        rng.normal(0, 1.5, n) if mask else np.zeros(n), rng.integers(0, 3, n), sh_degree)


def random_camera(rng, w=32, h=32):
    ang = rng.uniform(-0.4, 0.4, 2)
    d = rng.uniform(3.0, 4.5)
    eye = d * np.array([np.sin(ang[0]), np.sin(ang[1]), -np.cos(ang[0]) * np.cos(ang[1])])
    return Camera.look_at(eye, rng.uniform(-0.1, 0.1, 3), w, h, rng.uniform(30, 50))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True, scope="session")
def _deterministic_session():
    # module- and session-scoped fixtures build scenes before any
    # function-scoped fixture runs
    cobsplat.raster.set_deterministic(True)
    yield


@pytest.fixture(autouse=True)
def _deterministic():
    cobsplat.raster.set_deterministic(True)
    yield
    cobsplat.raster.set_deterministic(True)


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE = {}


def record(cid, ok, detail):
    """Register one acceptance result; printed at the end of the run."""
    line = f"C{cid:<2} {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[cid] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    tr = terminalreporter
    if ACCEPTANCE:
        tr.section("acceptance criteria")
        for cid in sorted(ACCEPTANCE):
            tr.write_line(ACCEPTANCE[cid])
    if BOUNDS["views"]:
        ok = not BOUNDS["violations"]
        tr.section("compositing bounds over the whole run")
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  {BOUNDS['views']} renders, {BOUNDS['pixels']} pixels, "
                      f"max(T + sum aT - 1) = {BOUNDS['max_excess']:.3g}, max mask = {BOUNDS['mask_max']:.6f}, "
                      f"{len(BOUNDS['violations'])} violations")
