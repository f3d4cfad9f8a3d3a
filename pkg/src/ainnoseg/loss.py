"""Per-pixel cross-entropy and the weighted three-head loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .tensor import Tensor, _node, add, mul_scalar

IGNORE_INDEX = 255


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1  # dual-attention head
    beta: float = 0.3  # ocr soft-region head
    gamma: float = 1.0  # final head

    def __post_init__(self):
        ws = (self.alpha, self.beta, self.gamma)
        if any(w < 0 for w in ws) or not any(w > 0 for w in ws):
            raise ConfigError(f"loss weights must be >= 0 and not all zero, got {ws}")

    @property
    def total(self) -> float:
        return self.alpha + self.beta + self.gamma


def _check_labels(labels: np.ndarray, num_classes: int, ignore_index: int) -> None:
    bad = (labels != ignore_index) & ((labels < 0) | (labels >= num_classes))
    if bad.any():
        pos = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DataError(f"label {labels[pos]} at pixel {pos} outside [0, {num_classes}) and not ignore")


def pixel_cross_entropy(logits: Tensor, labels: np.ndarray, ignore_index: int = IGNORE_INDEX) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over non-ignored pixels.

    ``logits`` is (C,H,W) or (N,C,H,W), ``labels`` the matching (H,W) or
    (N,H,W) integer map. When every pixel is ignored the loss is 0 and the
    result carries ``op == "cross_entropy_empty"``.
    """
    labels = np.asarray(labels)
    c_axis = logits.ndim - 3
    num_classes = logits.shape[c_axis]
    if logits.ndim - 1 != labels.ndim or logits.shape[:c_axis] + logits.shape[c_axis + 1:] != labels.shape:
        raise ShapeError(f"logits {logits.shape} do not align with labels {labels.shape}")
    _check_labels(labels, num_classes, ignore_index)

    valid = labels != ignore_index
    n_valid = int(valid.sum())
    if n_valid == 0:
        return _node(np.array(0.0), (logits,), lambda g: (np.zeros(logits.shape),), "cross_entropy_empty")

    z = logits.data - logits.data.max(axis=c_axis, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=c_axis, keepdims=True))
    safe = np.where(valid, labels, 0).astype(np.intp)
    picked = np.take_along_axis(logp, np.expand_dims(safe, c_axis), axis=c_axis).squeeze(c_axis)
    loss = -picked[valid].sum() / n_valid

    classes = np.arange(num_classes).reshape((num_classes,) + (1,) * (labels.ndim - c_axis))
    onehot = classes == np.expand_dims(safe, c_axis)
    mask = np.expand_dims(valid, c_axis)

    def backward(g):
        return ((np.exp(logp) - onehot) * mask * (g.item() / n_valid),)

    return _node(np.array(loss), (logits,), backward, "cross_entropy")


def composite_loss(out, labels: np.ndarray, w: LossWeights = LossWeights(), ignore_index: int = IGNORE_INDEX):
    """``alpha*CE(da) + beta*CE(ocr_aux) + gamma*CE(final)``.

    Returns the scalar loss and the three unweighted head losses as floats.
    Heads with zero weight are skipped entirely.
    """
    heads = (("da", w.alpha, out.da_logits), ("ocr", w.beta, out.ocr_aux_logits), ("final", w.gamma, out.final_logits))
    total = None
    parts = {}
    for name, weight, logits in heads:
        if weight == 0:
            continue
        ce = pixel_cross_entropy(logits, labels, ignore_index)
        parts[name] = ce.item()
        term = mul_scalar(ce, weight)
        total = term if total is None else add(total, term)
    return total, parts
