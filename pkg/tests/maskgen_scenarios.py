"""Scripted mock scenarios with hand-simulated expected traces.

Boxes are (x0, y0, x1, y1), half-open; frames are 16x16.
"""

import numpy as np

from cobsplat.maskgen import MaskGenConfig, MockScript, box_mask

H = W = 16
B0 = (2, 3, 9, 10)    # stage-1 prompt box
B5 = (4, 4, 12, 13)   # box re-detected at high confidence


def full_success():
    """Segmenter succeeds everywhere: stage 1 covers all frames, stage 2 never runs."""
    script = MockScript(8, H, W, {0: [{"box": list(B0), "score": 0.9}]},
                        config=MaskGenConfig(0, "mug", 0.25, 0.5))
    expect = {
        "valid": [1] * 8,
        "masks": {i: box_mask([B0], H, W) for i in range(8)},
        "touches": [1] * 8,
        "stage2_seeds": [],
        "stage2_no_boxes": [],
        "detector_calls": [(0, 0.25)],
        "propagations": [(0, 7)],
    }
    return script, expect


def mid_dropout_recovered():
    """Dropout on frames 5-8; the high-confidence detector finds the object
    only on frame 5, which re-seeds the segmenter over the run [5, 8]."""
    det = {0: [{"box": list(B0), "score": 0.3}],
           5: [{"box": list(B5), "score": 0.8}],
           6: [{"box": list(B5), "score": 0.2}]}
    script = MockScript(12, H, W, det, drop=[5, 6, 7, 8], config=MaskGenConfig(0, "mug", 0.25, 0.5))
    masks = {i: box_mask([B0], H, W) for i in range(12)}
    for i in range(5, 9):
        masks[i] = box_mask([B5], H, W)
    expect = {
        # after stage 1: [1,1,1,1,1,0,0,0,0,1,1,1]; stage 2 fills 5..8
        "valid": [1] * 12,
        "masks": masks,
        "touches": [1] * 5 + [2] * 4 + [1] * 3,
        "stage2_seeds": [5],
        "stage2_no_boxes": [],
        "detector_calls": [(0, 0.25), (5, 0.5)],
        "propagations": [(0, 11), (5, 8)],
    }
    return script, expect


def unrecoverable_dropout():
    """Frame 3 is lost for good (re-seeding there still yields nothing);
    frames 7-8 drop out and the high-confidence detector finds nothing there."""
    two = [{"box": [0, 0, 4, 4], "score": 0.7}, {"box": [10, 10, 16, 16], "score": 0.6}]
    det = {0: two, 3: [{"box": list(B5), "score": 0.9}], 7: [{"box": list(B5), "score": 0.4}]}
    script = MockScript(10, H, W, det, drop=[7, 8], lost=[3], config=MaskGenConfig(0, "mug", 0.25, 0.5))
    union = box_mask([(0, 0, 4, 4), (10, 10, 16, 16)], H, W)
    empty = np.zeros((H, W), bool)
    masks = {i: union for i in range(10)}
    for i in (3, 7, 8):
        masks[i] = empty
    expect = {
        "valid": [1, 1, 1, 0, 1, 1, 1, 0, 0, 1],
        "masks": masks,
        "touches": [1, 1, 1, 2, 1, 1, 1, 1, 1, 1],
        "stage2_seeds": [3],
        "stage2_no_boxes": [7, 8],
        "detector_calls": [(0, 0.25), (3, 0.5), (7, 0.5), (8, 0.5)],
        "propagations": [(0, 9), (3, 3)],
    }
    return script, expect


SCENARIOS = {"full_success": full_success, "mid_dropout_recovered": mid_dropout_recovered,
             "unrecoverable_dropout": unrecoverable_dropout}


def run_traced(script):
    """Run a script, returning the result and the mocks for trace inspection."""
    from cobsplat.maskgen import ScriptedDetector, ScriptedSegmenter, two_stage_generate
    frames = script.frames()
    det = ScriptedDetector(script.detections)
    det.bind(frames)
    seg = ScriptedSegmenter(script.drop, script.lost)
    return two_stage_generate(det, seg, frames, script.config), det, seg


def trace_matches(res, det, seg, expect):
    return (res.valid_vector == expect["valid"]
            and all(np.array_equal(res.segments[i], m) for i, m in expect["masks"].items())
            and [res.touches[i] for i in sorted(res.touches)] == expect["touches"]
            and res.stage2_seeds == expect["stage2_seeds"]
            and res.stage2_no_boxes == expect["stage2_no_boxes"]
            and det.calls == expect["detector_calls"]
            and seg.propagations == expect["propagations"])
