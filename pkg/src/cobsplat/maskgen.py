"""Two-stage text-prompted mask generation over a view sequence.

Stage 1 seeds a video segmenter with low-confidence detections on the
prompt frame and propagates over the whole sequence. Stage 2 revisits every
frame that came back empty (ascending order), re-detects at high confidence
and, when that finds something, seeds the segmenter at that frame and
propagates over the run of consecutive empty frames starting there.

Boxes are ``(x0, y0, x1, y1)`` pixel rectangles, half-open.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Protocol, Sequence, Tuple

import numpy as np

from .raster import ContractViolation
from .scene import Dataset, ValidationError

Box = Tuple[int, int, int, int]


class BoxDetector(Protocol):
    def detect(self, text: str, image: np.ndarray, confidence: float) -> List[Box]:
        ...


class VideoSegmenter(Protocol):
    def init(self, frames: Sequence[np.ndarray]) -> None:
        ...

    def add_box(self, frame_index: int, boxes: Sequence[Box]) -> None:
        ...

    def propagate(self, from_index: int, until_index: Optional[int] = None
                  ) -> Iterator[Tuple[int, np.ndarray]]:
        """Masks in ascending frame order. ``until_index=None`` covers the whole
        sequence; otherwise frames ``from_index..until_index`` inclusive."""
        ...


class NoInitialPrompt(ValidationError):
    """Stage-1 detection on the prompt frame found nothing."""


@dataclass
class MaskGenConfig:
    prompt_frame_index: int = 0
    text: str = ""
    c_low: float = 0.25
    c_high: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.c_low < self.c_high <= 1.0:
            raise ValidationError(f"need 0 <= c_low < c_high <= 1, got {self.c_low}, {self.c_high}")
        if self.prompt_frame_index < 0:
            raise ValidationError("prompt_frame_index must be non-negative")


def find_max_sub(valid: Mapping[int, int], key: int) -> Tuple[int, int]:
    """Longest run of consecutive invalid frames starting at ``key`` (inclusive bounds)."""
    if valid.get(key, 1) != 0:
        raise ContractViolation(f"frame {key} is valid; a run must start at an invalid frame")
    end = key
    while valid.get(end + 1, 1) == 0:
        end += 1
    return key, end


@dataclass
class MaskGenResult:
    segments: Dict[int, np.ndarray]
    valid: Dict[int, int]
    touches: Dict[int, int] = field(default_factory=dict)
    stage2_seeds: List[int] = field(default_factory=list)
    stage2_no_boxes: List[int] = field(default_factory=list)

    @property
    def valid_vector(self) -> List[int]:
        return [self.valid[i] for i in sorted(self.valid)]

    def coverage_summary(self) -> dict:
        missing = [i for i in sorted(self.valid) if not self.valid[i]]
        return {"n_frames": len(self.valid), "n_valid": len(self.valid) - len(missing),
                "missing": missing, "stage2_seeds": list(self.stage2_seeds),
                "stage2_no_boxes": list(self.stage2_no_boxes)}


def _is_empty(mask) -> bool:
    return mask is None or not np.any(mask)


def two_stage_generate(detector: BoxDetector, segmenter: VideoSegmenter,
                       frames: Sequence[np.ndarray], cfg: MaskGenConfig) -> MaskGenResult:
    n = len(frames)
    if n == 0:
        raise ValidationError("no frames given")
    if cfg.prompt_frame_index >= n:
        raise ValidationError(f"prompt_frame_index {cfg.prompt_frame_index} out of range for {n} frames")
    res = MaskGenResult({}, {i: 0 for i in range(n)}, {i: 0 for i in range(n)})

    def record(stream: Iterable[Tuple[int, np.ndarray]]):
        for i, m in stream:
            res.segments[i] = np.asarray(m) > 0
            res.valid[i] = 0 if _is_empty(m) else 1
            res.touches[i] += 1

    segmenter.init(frames)
    boxes = detector.detect(cfg.text, frames[cfg.prompt_frame_index], cfg.c_low)
    if not boxes:
        raise NoInitialPrompt(f"no initial prompt: nothing detected on frame {cfg.prompt_frame_index} "
                              f"at confidence {cfg.c_low}")
    segmenter.add_box(cfg.prompt_frame_index, boxes)
    record(segmenter.propagate(cfg.prompt_frame_index))

    revisited = set()
    for key in range(n):
        if res.valid[key] != 0 or key in revisited:
            continue
        boxes = detector.detect(cfg.text, frames[key], cfg.c_high)
        if not boxes:
            res.stage2_no_boxes.append(key)
            continue
        # seeded at the failed frame itself
        segmenter.add_box(key, boxes)
        lo, hi = find_max_sub(res.valid, key)
        res.stage2_seeds.append(key)
        revisited.update(range(lo, hi + 1))
        record(segmenter.propagate(lo, hi))
    return res


def masks_to_dataset(segments: Mapping[int, np.ndarray], dataset: Dataset, obj_id: int) -> Dataset:
    """Install generated masks as ``obj_id``; missing or empty frames get an
    all-zero mask and coverage False."""
    masks, coverage = [], []
    for v, cam in enumerate(dataset.cameras):
        m = segments.get(v)
        if m is None:
            masks.append(np.zeros((cam.height, cam.width), dtype=np.uint8))
            coverage.append(False)
            continue
        m = np.asarray(m)
        if m.shape != (cam.height, cam.width):
            raise ValidationError(f"view {v}: mask {m.shape[0]}×{m.shape[1]} vs camera {cam.height}×{cam.width}")
        masks.append((m > 0).astype(np.uint8))
        coverage.append(bool(np.any(m)))
    return dataset.with_masks(obj_id, masks, np.array(coverage, dtype=bool))


# ---------------------------------------------------------------- mocks


def box_mask(boxes: Sequence[Box], height: int, width: int) -> np.ndarray:
    m = np.zeros((height, width), dtype=bool)
    for x0, y0, x1, y1 in boxes:
        m[max(0, y0):max(0, min(height, y1)), max(0, x0):max(0, min(width, x1))] = True
    return m


class ScriptedDetector:
    """Replays per-frame scored detections; returns boxes scoring >= confidence.

    ``detections`` maps frame index to a list of ``{"box": [x0, y0, x1, y1],
    "score": s}``. Because filtering is by score, raising the confidence can
    only remove boxes.
    """

    def __init__(self, detections: Mapping[int, Sequence[dict]]):
        self.detections = {int(k): list(v) for k, v in detections.items()}
        self.calls: List[Tuple[int, float]] = []
        self._frame_of: Dict[int, int] = {}

    def bind(self, frames: Sequence[np.ndarray]) -> None:
        self._frame_of = {id(f): i for i, f in enumerate(frames)}

    def detect(self, text: str, image: np.ndarray, confidence: float) -> List[Box]:
        i = self._frame_of.get(id(image))
        if i is None:
            raise ContractViolation("scripted detector called with an unbound frame")
        self.calls.append((i, confidence))
        return [tuple(int(v) for v in d["box"]) for d in self.detections.get(i, [])
                if d["score"] >= confidence]


class ScriptedSegmenter:
    """Mask = union of the current prompt boxes, except on scripted failures.

    Frames in ``drop`` come back empty when the propagation was seeded outside
    the dropped run that contains them; seeding inside the run recovers it.
    Frames in ``lost`` are always empty.
    """

    def __init__(self, drop: Iterable[int] = (), lost: Iterable[int] = ()):
        self.drop = set(int(i) for i in drop)
        self.lost = set(int(i) for i in lost)
        self.frames: Sequence[np.ndarray] = []
        self.prompt: Optional[Tuple[int, List[Box]]] = None
        self.propagations: List[Tuple[int, int]] = []

    def init(self, frames):
        self.frames = frames
        self.prompt = None

    def add_box(self, frame_index, boxes):
        self.prompt = (int(frame_index), [tuple(b) for b in boxes])

    def _run_of(self, i):
        lo = hi = i
        while lo - 1 in self.drop:
            lo -= 1
        while hi + 1 in self.drop:
            hi += 1
        return lo, hi

    def propagate(self, from_index, until_index=None):
        if self.prompt is None:
            raise ContractViolation("propagate called before add_box")
        seed, boxes = self.prompt
        n = len(self.frames)
        lo, hi = (0, n - 1) if until_index is None else (from_index, until_index)
        self.propagations.append((lo, hi))
        seed_run = self._run_of(seed) if seed in self.drop else None
        for i in range(lo, hi + 1):
            h, w = np.shape(self.frames[i])[:2]
            if i in self.lost or (i in self.drop and (seed_run is None or not seed_run[0] <= i <= seed_run[1])):
                yield i, np.zeros((h, w), dtype=bool)
            else:
                yield i, box_mask(boxes, h, w)


@dataclass
class MockScript:
    """JSON-serializable maskgen scenario."""

    n_frames: int
    height: int
    width: int
    detections: Dict[int, List[dict]]
    drop: List[int] = field(default_factory=list)
    lost: List[int] = field(default_factory=list)
    config: MaskGenConfig = field(default_factory=MaskGenConfig)

    @classmethod
    def from_json(cls, d: dict) -> "MockScript":
        try:
            return cls(int(d["n_frames"]), int(d["height"]), int(d["width"]),
                       {int(k): v for k, v in d.get("detections", {}).items()},
                       list(d.get("drop", [])), list(d.get("lost", [])),
                       MaskGenConfig(**d.get("config", {})))
        except KeyError as exc:
            raise ValidationError(f"mock script missing field {exc}") from None

    @classmethod
    def load(cls, path) -> "MockScript":
        with open(path) as f:
            return cls.from_json(json.load(f))

    def frames(self) -> List[np.ndarray]:
        return [np.zeros((self.height, self.width, 3)) for _ in range(self.n_frames)]

    def run(self) -> MaskGenResult:
        frames = self.frames()
        det = ScriptedDetector(self.detections)
        det.bind(frames)
        return two_stage_generate(det, ScriptedSegmenter(self.drop, self.lost), frames, self.config)
