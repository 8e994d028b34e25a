"""Intersection-over-union and the two mIoU conventions.

Aggregation pools pixel counts per class across episodes (dataset-level
IoU) and then averages the per-class values without weighting.
"""
import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ShapeError

IGNORE = 255


@dataclass(frozen=True)
class EpisodeResult:
    novel_class: int
    fg_intersection: int
    fg_union: int
    bg_intersection: int
    bg_union: int

    @property
    def fg_iou(self):
        return _ratio(self.fg_intersection, self.fg_union)

    @property
    def bg_iou(self):
        return _ratio(self.bg_intersection, self.bg_union)

    def to_record(self):
        rec = asdict(self)
        rec["fg_iou"] = self.fg_iou
        rec["bg_iou"] = self.bg_iou
        rec["fg_bg_iou"] = 0.5 * (self.fg_iou + self.bg_iou)
        return rec


def _ratio(inter, union):
    return 1.0 if union == 0 else inter / union


def _counts(pred_mask, gt_mask, valid=None):
    pred_mask = np.asarray(pred_mask, dtype=bool)
    gt_mask = np.asarray(gt_mask, dtype=bool)
    if pred_mask.shape != gt_mask.shape:
        raise ShapeError(f"prediction {pred_mask.shape} vs ground truth {gt_mask.shape}")
    if valid is not None:
        pred_mask = pred_mask & valid
        gt_mask = gt_mask & valid
    return int((pred_mask & gt_mask).sum()), int((pred_mask | gt_mask).sum())


def iou(pred, gt, class_id):
    """IoU of one class; pixels labelled ignore in ``gt`` are left out.

    Returns 1.0 when the class is absent from both maps.
    """
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    inter, union = _counts(pred == class_id, gt == class_id, gt != IGNORE)
    return _ratio(inter, union)


def binary_iou(pred_mask, gt_mask):
    return _ratio(*_counts(pred_mask, gt_mask))


def episode_result(pred, gt_mask, novel_class):
    """Foreground/background counts of a 1-way prediction.

    Any predicted label other than ``novel_class`` counts as background.
    """
    fg_pred = np.asarray(pred) == novel_class
    fg_gt = np.asarray(gt_mask) > 0
    fi, fu = _counts(fg_pred, fg_gt)
    bi, bu = _counts(~fg_pred, ~fg_gt)
    return EpisodeResult(int(novel_class), fi, fu, bi, bu)


def _pooled_mean(results, classes, inter_key, union_key, what):
    inter, union = {}, {}
    for r in results:
        inter[r.novel_class] = inter.get(r.novel_class, 0) + getattr(r, inter_key)
        union[r.novel_class] = union.get(r.novel_class, 0) + getattr(r, union_key)
    values = []
    for c in classes:
        if union.get(c, 0) == 0:
            warnings.warn(f"class {c} has zero {what} union; excluded from the mean")
            continue
        values.append(inter[c] / union[c])
    if not values:
        raise ValueError("no class with a non-empty union")
    return float(np.mean(values))


def miou_foreground(results, classes=None):
    """Unweighted mean over classes of count-pooled foreground IoU."""
    results = list(results)
    if not results:
        raise ValueError("no episode results")
    classes = sorted({r.novel_class for r in results}) if classes is None else sorted(classes)
    return _pooled_mean(results, classes, "fg_intersection", "fg_union", "foreground")


def miou_background(results, classes=None):
    results = list(results)
    if not results:
        raise ValueError("no episode results")
    classes = sorted({r.novel_class for r in results}) if classes is None else sorted(classes)
    return _pooled_mean(results, classes, "bg_intersection", "bg_union", "background")


def miou_fg_bg(results, classes=None):
    """Mean of the foreground and background aggregates."""
    return 0.5 * (miou_foreground(results, classes) + miou_background(results, classes))


class ConfusionCounts:
    """Pooled per-class intersection/union counts for n-way evaluation."""

    def __init__(self, classes):
        self.classes = sorted(int(c) for c in classes)
        self.intersection = dict.fromkeys(self.classes, 0)
        self.union = dict.fromkeys(self.classes, 0)

    def update(self, pred, gt):
        pred, gt = np.asarray(pred), np.asarray(gt)
        if pred.shape != gt.shape:
            raise ShapeError(f"prediction {pred.shape} vs ground truth {gt.shape}")
        valid = gt != IGNORE
        for c in self.classes:
            i, u = _counts(pred == c, gt == c, valid)
            self.intersection[c] += i
            self.union[c] += u
        return self

    def per_class(self):
        return {c: self.intersection[c] / self.union[c]
                for c in self.classes if self.union[c] > 0}

    def miou(self):
        values = self.per_class()
        return float(np.mean(list(values.values()))) if values else float("nan")


def write_jsonl(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
