import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cobsplat import (Camera, ContractViolation, Dataset, MaskGenConfig, NoInitialPrompt,
                      ValidationError, find_max_sub, two_stage_generate)
from cobsplat.maskgen import MockScript, ScriptedDetector, ScriptedSegmenter, box_mask, masks_to_dataset

from maskgen_scenarios import SCENARIOS, run_traced, trace_matches


@pytest.mark.parametrize("valid,key,expect", [
    ([1, 1, 0, 0, 0, 1], 2, (2, 4)),
    ([0], 0, (0, 0)),
    ([1, 0, 1, 0, 0], 3, (3, 4)),
])
def test_find_max_sub_examples(valid, key, expect):
    assert find_max_sub(dict(enumerate(valid)), key) == expect


def test_find_max_sub_valid_key():
    with pytest.raises(ContractViolation):
        find_max_sub({0: 1, 1: 0}, 0)


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_scripted_scenarios_match_hand_trace(name):
    script, expect = SCENARIOS[name]()
    res, det, seg = run_traced(script)
    assert res.valid_vector == expect["valid"]
    for i, m in expect["masks"].items():
        np.testing.assert_array_equal(res.segments[i], m)
    assert [res.touches[i] for i in sorted(res.touches)] == expect["touches"]
    assert res.stage2_seeds == expect["stage2_seeds"]
    assert res.stage2_no_boxes == expect["stage2_no_boxes"]
    assert det.calls == expect["detector_calls"]
    assert seg.propagations == expect["propagations"]
    assert trace_matches(res, det, seg, expect)


def test_coverage_summary_reports_missing():
    script, _ = SCENARIOS["unrecoverable_dropout"]()
    summary = script.run().coverage_summary()
    assert summary["missing"] == [3, 7, 8]
    assert summary["n_valid"] == 7 and summary["stage2_no_boxes"] == [7, 8]


def test_no_initial_prompt():
    script = MockScript(4, 8, 8, {0: [{"box": [0, 0, 2, 2], "score": 0.1}]},
                        config=MaskGenConfig(0, "x", 0.25, 0.5))
    with pytest.raises(NoInitialPrompt, match="no initial prompt"):
        script.run()


def test_config_validation():
    with pytest.raises(ValidationError):
        MaskGenConfig(c_low=0.6, c_high=0.5)
    with pytest.raises(ValidationError):
        MaskGenConfig(c_low=0.2, c_high=1.2)
    with pytest.raises(ValidationError):
        two_stage_generate(None, None, [], MaskGenConfig())


def test_detector_confidence_monotone():
    frames = [np.zeros((8, 8, 3))]
    det = ScriptedDetector({0: [{"box": [0, 0, 2, 2], "score": s} for s in (0.2, 0.5, 0.9)]})
    det.bind(frames)
    counts = [len(det.detect("x", frames[0], c)) for c in (0.0, 0.3, 0.6, 0.95)]
    assert counts == [3, 2, 1, 0]


def test_mock_script_json(tmp_path):
    d = {"n_frames": 3, "height": 4, "width": 4, "detections": {"0": [{"box": [0, 0, 2, 2], "score": 1.0}]},
         "drop": [2], "config": {"c_low": 0.1, "c_high": 0.8}}
    p = tmp_path / "s.json"
    p.write_text(json.dumps(d))
    res = MockScript.load(p).run()
    assert res.valid_vector == [1, 1, 0]
    with pytest.raises(ValidationError, match="missing field"):
        MockScript.from_json({"n_frames": 2})


def _random_script(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(1, 14))
    det = {}
    for i in range(n):
        if r.uniform() < 0.6:
            x0, y0 = r.integers(0, 6, 2)
            det[i] = [{"box": [int(x0), int(y0), int(x0) + 4, int(y0) + 3], "score": float(r.uniform(0.3, 1))}]
    det.setdefault(0, [{"box": [1, 1, 5, 5], "score": 0.9}])
    det[0][0]["score"] = max(det[0][0]["score"], 0.3)
    drop = [i for i in range(n) if r.uniform() < 0.35]
    lost = [i for i in range(n) if r.uniform() < 0.1]
    return MockScript(n, 10, 10, det, drop, lost, MaskGenConfig(0, "t", 0.25, 0.6))


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_two_stage_invariants_property(seed):
    script = _random_script(seed)
    frames = script.frames()
    det = ScriptedDetector(script.detections)
    det.bind(frames)
    seg = ScriptedSegmenter(script.drop, script.lost)
    # stage-1 only, for comparison
    seg1 = ScriptedSegmenter(script.drop, script.lost)
    seg1.init(frames)
    seg1.add_box(0, det.detect("t", frames[0], 0.25))
    stage1_masks = dict(seg1.propagate(0))
    stage1 = {i: bool(np.any(m)) for i, m in stage1_masks.items()}
    res = two_stage_generate(det, seg, frames, script.config)
    assert all(t <= 2 for t in res.touches.values())
    for i, ok in stage1.items():
        if ok:
            # a valid frame is never regressed or revisited
            assert res.valid[i] == 1 and res.touches[i] == 1
            np.testing.assert_array_equal(res.segments[i], stage1_masks[i])
    for lo, hi in seg.propagations[1:]:
        assert not any(stage1[i] for i in range(lo, hi + 1))
    again = script.run()
    assert again.valid_vector == res.valid_vector
    assert all(np.array_equal(again.segments[i], res.segments[i]) for i in res.segments)


def test_multi_box_union():
    script, expect = SCENARIOS["unrecoverable_dropout"]()
    res = script.run()
    np.testing.assert_array_equal(res.segments[0], box_mask([(0, 0, 4, 4), (10, 10, 16, 16)], 16, 16))


# ---------------------------------------------------------------- dataset install


def _ds(v=4, w=6, h=5):
    cams = [Camera(w, h, 8, 8, w / 2, h / 2) for _ in range(v)]
    return Dataset(cams, [np.zeros((h, w, 3)) for _ in range(v)])


def test_masks_to_dataset_empty():
    ds = masks_to_dataset({}, _ds(), 1)
    assert all(not m.any() for m in ds.mask_sets[1])
    assert not ds.mask_coverage[1].any()


def test_masks_to_dataset_full_and_partial():
    full = {i: np.ones((5, 6), bool) for i in range(4)}
    ds = masks_to_dataset(full, _ds(), 2)
    assert len(ds.mask_sets[2]) == 4 and ds.mask_coverage[2].all()
    part = {0: np.ones((5, 6), bool), 1: np.zeros((5, 6), bool), 3: np.ones((5, 6), bool)}
    ds = masks_to_dataset(part, _ds(), 1)
    assert ds.mask_coverage[1].tolist() == [True, False, False, True]


def test_masks_to_dataset_coverage_matches_valid():
    script, expect = SCENARIOS["unrecoverable_dropout"]()
    res = script.run()
    cams = [Camera(16, 16, 8, 8, 8, 8) for _ in range(script.n_frames)]
    ds = masks_to_dataset(res.segments, Dataset(cams, script.frames()), 1)
    assert ds.mask_coverage[1].astype(int).tolist() == expect["valid"]


def test_masks_to_dataset_resolution_mismatch():
    with pytest.raises(ValidationError, match="view 0"):
        masks_to_dataset({0: np.ones((3, 3))}, _ds(), 1)
