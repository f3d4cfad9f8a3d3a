"""Multi-scale inference with mean-probability fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .augment import scaled_size
from .errors import ConfigError
from .tensor import Tensor, no_grad

PIXEL_MEAN = 0.5
PIXEL_STD = 0.25

FULL_BASE_SCALES = (520, 640, 800)
FULL_MULTIPLES = (0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0)


@dataclass
class InferenceConfig:
    base_scales: tuple[int, ...] = (64,)
    multiples: tuple[float, ...] = (0.5, 1.0, 2.0)
    fuse: str = "mean-prob"

    def __post_init__(self):
        self.base_scales = tuple(int(s) for s in self.base_scales)
        self.multiples = tuple(float(m) for m in self.multiples)
        if not self.base_scales or not self.multiples:
            raise ConfigError("inference needs at least one base scale and one multiple")
        if min(self.base_scales) <= 0 or min(self.multiples) <= 0:
            raise ConfigError(f"scales {self.base_scales} and multiples {self.multiples} must be positive")
        if self.fuse != "mean-prob":
            raise ConfigError(f"unsupported fusion {self.fuse!r}")

    @classmethod
    def full_scale(cls) -> "InferenceConfig":
        """Three base scales times seven multiples."""
        return cls(FULL_BASE_SCALES, FULL_MULTIPLES)

    @classmethod
    def full_scale_short(cls) -> "InferenceConfig":
        """Single (520, 640) base with the four listed multiples."""
        return cls((520,), (0.5, 1.0, 1.5, 2.0))

    def grid(self) -> list[tuple[int, float]]:
        """All (base, multiple) pairs in canonical sorted order."""
        return sorted((b, m) for b in self.base_scales for m in self.multiples)


def to_input(image: np.ndarray) -> Tensor:
    """uint8 (H,W,3) -> normalised float (3,H,W)."""
    x = np.moveaxis(image.astype(np.float64), 2, 0) / 255.0
    return Tensor((x - PIXEL_MEAN) / PIXEL_STD)


def infer_single(model, image: np.ndarray, scale: int) -> np.ndarray:
    """Class probabilities (C,H,W) with the shorter side resized to ``scale``."""
    h, w = image.shape[:2]
    x = to_input(image)
    nh, nw = scaled_size(h, w, scale)
    div = model.cfg.divisor
    ph, pw = -(-nh // div) * div, -(-nw // div) * div
    with no_grad():
        if (nh, nw) != (h, w):
            x = T.bilinear_resize(x, nh, nw)
        if (ph, pw) != (nh, nw):
            padded = np.zeros((3, ph, pw))
            padded[:, :nh, :nw] = x.data
            x = Tensor(padded)
        logits = model(x).final_logits
        if (ph, pw) != (nh, nw):
            logits = Tensor(logits.data[:, :nh, :nw].copy())
        probs = T.softmax(logits, axis=0)
        if (nh, nw) != (h, w):
            probs = T.bilinear_resize(probs, h, w)
            return probs.data / probs.data.sum(axis=0, keepdims=True)
    return probs.data


def fuse_probabilities(maps: list[np.ndarray]) -> np.ndarray:
    acc = np.zeros_like(maps[0])
    for m in maps:
        acc += m
    return acc / len(maps)


def multiscale_infer(model, image: np.ndarray, cfg: InferenceConfig) -> tuple[np.ndarray, np.ndarray]:
    """Fused ``(labels uint8 (H,W), probabilities (C,H,W))``.

    The grid is enumerated in sorted order so permuting the configured lists
    cannot change the summation order. Duplicate entries count with their
    multiplicity.
    """
    cache: dict[int, np.ndarray] = {}
    maps = []
    for base, mult in cfg.grid():
        s = max(1, int(round(base * mult)))
        if s not in cache:
            cache[s] = infer_single(model, image, s)
        maps.append(cache[s])
    probs = fuse_probabilities(maps)
    return np.argmax(probs, axis=0).astype(np.uint8), probs
