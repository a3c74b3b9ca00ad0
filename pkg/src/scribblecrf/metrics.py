"""Confusion-matrix bookkeeping and mean intersection-over-union."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LabelMask, check_same_shape


@dataclass(frozen=True)
class ConfusionMatrix:
    """Pixel counts, rows = ground truth class, columns = predicted class."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 1:
            raise ValueError("counts must be a non-empty square matrix")
        if c.dtype.kind not in "iu" or np.any(c < 0):
            raise ValueError("counts must be non-negative integers")
        c = c.astype(np.int64, copy=True)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @classmethod
    def empty(cls, classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((classes, classes), dtype=np.int64))

    @property
    def classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.classes != self.classes:
            raise ValueError("class counts differ")
        return ConfusionMatrix(self.counts + other.counts)


def confusion(pred: LabelMask, gt: LabelMask, classes: int) -> ConfusionMatrix:
    """Counts for one image; ignore pixels of ``gt`` contribute nothing."""
    check_same_shape(pred, gt)
    if not pred.is_complete:
        raise ValueError("prediction contains ignore pixels")
    keep = gt.valid
    g = gt.labels[keep]
    p = pred.labels[keep]
    if g.size and (g.max() >= classes or p.max() >= classes):
        raise ValueError(f"label out of range for {classes} classes")
    if np.any(pred.labels >= classes):
        raise ValueError(f"predicted label out of range for {classes} classes")
    flat = np.bincount(g * classes + p, minlength=classes * classes)
    return ConfusionMatrix(flat.reshape(classes, classes))


def accumulate(cm: ConfusionMatrix, pred: LabelMask, gt: LabelMask) -> ConfusionMatrix:
    return cm + confusion(pred, gt, cm.classes)


def per_class_iou(cm: ConfusionMatrix) -> np.ndarray:
    """IoU per class, NaN where the class is absent from both gt and prediction."""
    c = cm.counts.astype(np.float64)
    inter = np.diag(c)
    union = c.sum(axis=0) + c.sum(axis=1) - inter
    out = np.full(cm.classes, np.nan)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def miou(cm: ConfusionMatrix, absent_as_zero: bool = False) -> tuple[float, np.ndarray]:
    """Mean IoU over present classes and the per-class IoU vector (NaN = absent).

    With ``absent_as_zero`` the absent classes count as 0 in the mean.
    """
    iou = per_class_iou(cm)
    present = ~np.isnan(iou)
    if not present.any():
        raise ValueError("empty evaluation")
    if absent_as_zero:
        return float(np.nan_to_num(iou).mean()), iou
    return float(iou[present].mean()), iou
