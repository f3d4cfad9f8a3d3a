"""Mosaic stitching, multi-scale random resize/crop and dataset enlargement.

Images resize bilinearly (then round to uint8); labels resize by nearest
neighbour. Both use the half-pixel mapping ``src = (i + 0.5) * n_in / n_out - 0.5``,
so the nearest source pixel of a label is the one the bilinear weights centre on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .seeding import derive_seed, rng_for
from .tensor import interp_matrix

IGNORE_INDEX = 255


@dataclass
class Sample:
    image: np.ndarray  # (H, W, 3) uint8
    labels: np.ndarray  # (H, W) uint8, 255 = ignore
    id: str = ""

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise DataError(f"sample {self.id!r}: image must be (H,W,3), got {self.image.shape}")
        if self.image.shape[:2] != self.labels.shape:
            raise DataError(f"sample {self.id!r}: image {self.image.shape[:2]} vs labels {self.labels.shape}")

    @property
    def size(self) -> tuple[int, int]:
        return self.labels.shape


@dataclass
class AugmentConfig:
    out_size: tuple[int, int] = (64, 64)
    mosaic_ratio: float = 0.3
    base_scales: tuple[int, ...] = (64,)
    scale_jitter: tuple[float, float] = (0.75, 1.5)
    crop_size: tuple[int, int] = (64, 64)
    seed: int = 0
    fold_validation: bool = False
    mosaic_source: str = "train"  # or "train+val"

    def __post_init__(self):
        self.out_size = tuple(self.out_size)
        self.base_scales = tuple(self.base_scales)
        self.scale_jitter = tuple(self.scale_jitter)
        self.crop_size = tuple(self.crop_size)
        if not 0.0 <= self.mosaic_ratio <= 1.0:
            raise ConfigError(f"mosaic_ratio must lie in [0, 1], got {self.mosaic_ratio}")
        if not self.base_scales or min(self.base_scales) <= 0:
            raise ConfigError(f"base_scales must be positive, got {self.base_scales}")
        lo, hi = self.scale_jitter
        if lo <= 0 or hi < lo:
            raise ConfigError(f"scale_jitter must satisfy 0 < min <= max, got {self.scale_jitter}")
        if min(self.out_size) < 4 or min(self.crop_size) < 1:
            raise ConfigError(f"out_size {self.out_size} / crop_size {self.crop_size} too small")
        if self.mosaic_source not in ("train", "train+val"):
            raise ConfigError(f"mosaic_source must be 'train' or 'train+val', got {self.mosaic_source!r}")


def nearest_index(n_in: int, n_out: int) -> np.ndarray:
    """Source index of each output position under nearest-neighbour resize."""
    idx = np.floor((np.arange(n_out) + 0.5) * n_in / n_out).astype(np.intp)
    return np.minimum(idx, n_in - 1)


def resize_image(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    ry, rx = interp_matrix(h, out_h), interp_matrix(w, out_w)
    planes = np.moveaxis(img.astype(np.float64), 2, 0)
    out = np.moveaxis(ry @ planes @ rx.T, 0, 2)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def resize_labels(labels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = labels.shape
    return labels[np.ix_(nearest_index(h, out_h), nearest_index(w, out_w))]


def resize_sample(s: Sample, out_h: int, out_w: int) -> Sample:
    return Sample(resize_image(s.image, out_h, out_w), resize_labels(s.labels, out_h, out_w), s.id)


def mosaic_center(out_size: tuple[int, int], rng: np.random.Generator) -> tuple[int, int]:
    """Split point drawn from the middle half of each side."""
    h, w = out_size
    cy = int(rng.integers(-(-h // 4), (3 * h) // 4 + 1))
    cx = int(rng.integers(-(-w // 4), (3 * w) // 4 + 1))
    return cy, cx


def quadrant_boxes(out_size, center) -> list[tuple[int, int, int, int]]:
    """(y0, y1, x0, x1) for top-left, top-right, bottom-left, bottom-right."""
    h, w = out_size
    cy, cx = center
    return [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)]


def mosaic4(samples, out_size, seed: int) -> Sample:
    """Stitch four samples into one, each resized whole into its quadrant."""
    samples = list(samples)
    if len(samples) != 4:
        raise ConfigError(f"mosaic4 needs exactly four samples, got {len(samples)}")
    out_size = tuple(out_size)
    center = mosaic_center(out_size, np.random.default_rng(seed))
    image = np.zeros(out_size + (3,), dtype=np.uint8)
    labels = np.full(out_size, IGNORE_INDEX, dtype=np.uint8)
    for s, (y0, y1, x0, x1) in zip(samples, quadrant_boxes(out_size, center)):
        image[y0:y1, x0:x1] = resize_image(s.image, y1 - y0, x1 - x0)
        labels[y0:y1, x0:x1] = resize_labels(s.labels, y1 - y0, x1 - x0)
    return Sample(image, labels, "mosaic-" + "+".join(s.id for s in samples))


def scaled_size(h: int, w: int, short_side: int) -> tuple[int, int]:
    """Resize so the shorter side equals ``short_side``, keeping aspect."""
    if h <= w:
        return short_side, max(1, int(round(w * short_side / h)))
    return max(1, int(round(h * short_side / w))), short_side


def random_scale_crop(s: Sample, cfg: AugmentConfig, seed: int) -> Sample:
    rng = np.random.default_rng(seed)
    base = cfg.base_scales[int(rng.integers(len(cfg.base_scales)))]
    lo, hi = cfg.scale_jitter
    factor = rng.uniform(lo, hi) if hi > lo else lo
    short = max(1, int(round(base * factor)))
    nh, nw = scaled_size(*s.size, short)
    r = resize_sample(s, nh, nw)
    ch, cw = cfg.crop_size
    ph, pw = max(ch, nh), max(cw, nw)
    image = np.zeros((ph, pw, 3), dtype=np.uint8)
    labels = np.full((ph, pw), IGNORE_INDEX, dtype=np.uint8)
    image[:nh, :nw] = r.image
    labels[:nh, :nw] = r.labels
    y0 = int(rng.integers(ph - ch + 1))
    x0 = int(rng.integers(pw - cw + 1))
    return Sample(image[y0:y0 + ch, x0:x0 + cw].copy(), labels[y0:y0 + ch, x0:x0 + cw].copy(), s.id)


def mosaic_count(n: int, ratio: float) -> int:
    """``round(ratio * n)`` with halves rounded up."""
    return int(np.floor(ratio * n + 0.5))


def build_augmented_dataset(train, cfg: AugmentConfig, val=None) -> list:
    """Originals followed by ``round(ratio * N)`` mosaics.

    With ``cfg.fold_validation`` the validation samples join the originals;
    ``cfg.mosaic_source`` picks whether mosaics draw from train only or
    train+val.
    """
    train = list(train)
    val = list(val or [])
    originals = train + val if cfg.fold_validation else train
    pool = train + val if cfg.mosaic_source == "train+val" else train
    if len(pool) < 4:
        raise ConfigError(f"mosaic needs at least 4 source samples, got {len(pool)}")
    n_mosaic = mosaic_count(len(originals), cfg.mosaic_ratio)
    out = list(originals)
    for k in range(n_mosaic):
        rng = rng_for(cfg.seed, "mosaic", k)
        pick = rng.choice(len(pool), size=4, replace=False)
        m = mosaic4([pool[i] for i in pick], cfg.out_size, derive_seed(cfg.seed, "mosaic-center", k))
        m.id = f"mosaic{k:06d}"
        out.append(m)
    return out
