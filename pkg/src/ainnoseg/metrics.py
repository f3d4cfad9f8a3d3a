"""Confusion-matrix scoring: pixel accuracy, mean IoU and their average."""

from __future__ import annotations

import numpy as np

from .errors import DataError, ShapeError

IGNORE_INDEX = 255


class ConfusionMatrix:
    """Counts indexed ``[ground truth, prediction]``; ignored pixels are skipped."""

    def __init__(self, num_classes: int, counts: np.ndarray | None = None):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64) if counts is None else counts

    def copy(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.num_classes, self.counts.copy())

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def update(self, pred: np.ndarray, gt: np.ndarray, ignore_index: int = IGNORE_INDEX) -> "ConfusionMatrix":
        pred, gt = np.asarray(pred), np.asarray(gt)
        if pred.shape != gt.shape:
            raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
        keep = gt != ignore_index
        n = self.num_classes
        for name, arr in (("ground truth", gt[keep]), ("prediction", pred[keep])):
            if arr.size and (arr.min() < 0 or arr.max() >= n):
                raise DataError(f"{name} class outside [0, {n}): {arr[(arr < 0) | (arr >= n)][0]}")
        idx = gt[keep].astype(np.int64) * n + pred[keep].astype(np.int64)
        self.counts += np.bincount(idx, minlength=n * n).reshape(n, n)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return merge(self, other)

    def iou_per_class(self) -> np.ndarray:
        """IoU per class, NaN where the class is absent from both maps."""
        inter = np.diag(self.counts).astype(np.float64)
        union = self.counts.sum(0) + self.counts.sum(1) - np.diag(self.counts)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(union > 0, inter / np.maximum(union, 1), np.nan)


def merge(a: ConfusionMatrix, b: ConfusionMatrix) -> ConfusionMatrix:
    if a.num_classes != b.num_classes:
        raise ShapeError(f"cannot merge {a.num_classes}-class and {b.num_classes}-class matrices")
    return ConfusionMatrix(a.num_classes, a.counts + b.counts)


def pixel_accuracy(cm: ConfusionMatrix) -> tuple[float, bool]:
    """``(trace / total, empty)``; 0.0 with ``empty=True`` when nothing was counted."""
    total = cm.total
    if total == 0:
        return 0.0, True
    return float(np.trace(cm.counts) / total), False


def miou(cm: ConfusionMatrix) -> tuple[float, bool]:
    """Mean IoU over classes with non-zero union; ``(0.0, True)`` if none."""
    ious = cm.iou_per_class()
    present = ~np.isnan(ious)
    if not present.any():
        return 0.0, True
    return float(ious[present].mean()), False


def final_score(acc: float, mean_iou: float) -> float:
    return (acc + mean_iou) / 2.0


def evaluate(cm: ConfusionMatrix) -> dict:
    acc, empty = pixel_accuracy(cm)
    m, _ = miou(cm)
    return {
        "pixel_accuracy": acc,
        "miou": m,
        "score": final_score(acc, m),
        "iou_per_class": cm.iou_per_class().tolist(),
        "pixels": cm.total,
        "empty": empty,
    }
