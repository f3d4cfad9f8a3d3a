"""Seeded mini-batch SGD over the composite loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .augment import AugmentConfig, random_scale_crop
from .errors import ConfigError, NumericError
from .inference import to_input
from .loss import LossWeights, composite_loss
from .model import ModelConfig, SegModel
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 500
    lr: float = 0.1
    momentum: float = 0.9
    batch_size: int = 8
    lr_schedule: str = "poly"  # or "constant"
    grad_clip: float | None = 1.0  # global L2 norm; None disables
    weights: LossWeights = field(default_factory=LossWeights)
    augment: bool = False
    augment_cfg: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError(f"steps ({self.steps}) and batch_size ({self.batch_size}) must be positive")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.lr_schedule not in ("poly", "constant"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")

    def lr_at(self, step: int) -> float:
        if self.lr_schedule == "constant":
            return self.lr
        return self.lr * (1.0 - step / self.steps) ** 0.9


@dataclass
class TrainResult:
    model: SegModel
    losses: list[float]
    head_losses: list[dict]


def _batch_arrays(samples, tc: TrainConfig, step: int) -> tuple[np.ndarray, np.ndarray]:
    if tc.augment:
        samples = [random_scale_crop(s, tc.augment_cfg, derive_seed(tc.seed, "aug", step, k)) for k, s in enumerate(samples)]
    sizes = {s.size for s in samples}
    if len(sizes) != 1:
        raise ConfigError(f"batch mixes image sizes {sorted(sizes)}; enable augmentation or resize the data")
    x = np.stack([to_input(s.image).data for s in samples])
    y = np.stack([s.labels for s in samples])
    return x, y


def clip_grad_norm(params, max_norm: float) -> float:
    """Rescale gradients in place so their joint L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float(np.vdot(p.grad, p.grad)) for p in params if p.grad is not None)))
    if norm > max_norm:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return norm


def train(model_cfg: ModelConfig, data, tc: TrainConfig, init: SegModel | None = None) -> TrainResult:
    """Train from ``init`` (or fresh weights seeded by ``tc.seed``).

    Batches come from per-epoch seeded permutations; the loss curve is
    returned alongside the model.
    """
    data = list(data)
    if not data:
        raise ConfigError("training data is empty")
    if init is None:
        model = SegModel(model_cfg, seed=derive_seed(tc.seed, "init"))
    else:
        model = SegModel(model_cfg, {k: T.Tensor(v.data, requires_grad=True) for k, v in init.params.items()})
    opt = T.SGD(model.parameters(), tc.lr, tc.momentum)
    bs = min(tc.batch_size, len(data))
    order: list[int] = []
    epoch = 0
    losses, heads = [], []
    for step in range(tc.steps):
        if len(order) < bs:
            order += rng_for(tc.seed, "epoch", epoch).permutation(len(data)).tolist()
            epoch += 1
        idx, order = order[:bs], order[bs:]
        x, y = _batch_arrays([data[i] for i in idx], tc, step)
        opt.lr = tc.lr_at(step)
        opt.zero_grad()
        try:
            loss, parts = composite_loss(model(T.Tensor(x)), y, tc.weights)
            loss.backward()
        except NumericError as exc:
            raise NumericError(f"step {step}: {exc}") from exc
        if tc.grad_clip is not None:
            clip_grad_norm(opt.params, tc.grad_clip)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(f"step {step}: loss is {value}")
        opt.step()
        losses.append(value)
        heads.append(parts)
        if tc.log_every and (step % tc.log_every == 0 or step == tc.steps - 1):
            log.info("step %d loss %.5f", step, value)
    return TrainResult(model, losses, heads)
