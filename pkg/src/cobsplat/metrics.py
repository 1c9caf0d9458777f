"""Binary-mask segmentation metrics."""

from __future__ import annotations

import numpy as np

from .scene import ValidationError


def _binary_pair(pred, gt):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValidationError(f"dimension mismatch: {pred.shape} vs {gt.shape}")
    return pred > 0, gt > 0


def iou(pred, gt) -> float:
    """Intersection over union; two empty masks score 1."""
    p, g = _binary_pair(pred, gt)
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & g) / union


def acc(pred, gt) -> float:
    p, g = _binary_pair(pred, gt)
    return float(np.mean(p == g))


def mean_iou(preds, gts) -> float:
    return float(np.mean([iou(p, g) for p, g in zip(preds, gts)]))


def mean_acc(preds, gts) -> float:
    return float(np.mean([acc(p, g) for p, g in zip(preds, gts)]))
