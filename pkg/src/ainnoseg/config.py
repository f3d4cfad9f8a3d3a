"""Run configuration: one YAML document, one section per component."""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .augment import AugmentConfig
from .errors import ConfigError
from .inference import FULL_BASE_SCALES, FULL_MULTIPLES, InferenceConfig
from .loss import LossWeights
from .model import ModelConfig
from .selftrain import SelfTrainConfig
from .train import TrainConfig


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads exponent floats without a dot or sign (``1e-3``)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*(?:\.[0-9_]*)?|\.[0-9_]+)(?:[eE][-+]?[0-9]+)?$"
               r"|^[-+]?\.(?:inf|Inf|INF)$|^\.(?:nan|NaN|NAN)$"),
    list("-+0123456789."),
)

_TRAIN_KEYS = ("steps", "lr", "momentum", "batch_size", "lr_schedule", "grad_clip", "augment", "seed", "log_every")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    selftrain: SelfTrainConfig = field(default_factory=SelfTrainConfig)

    @property
    def loss(self) -> LossWeights:
        return self.train.weights

    @classmethod
    def full_scale(cls) -> "RunConfig":
        """Every value the method description pins, at full scale."""
        aug = AugmentConfig(out_size=(520, 520), mosaic_ratio=0.3, base_scales=FULL_BASE_SCALES,
                            scale_jitter=(1.0, 2.0), crop_size=(512, 512), fold_validation=True)
        return cls(
            model=ModelConfig(num_classes=150, input_size=(512, 512)),
            train=TrainConfig(weights=LossWeights(0.1, 0.3, 1.0), augment=True, augment_cfg=aug),
            augment=aug,
            inference=InferenceConfig(FULL_BASE_SCALES, FULL_MULTIPLES),
            selftrain=SelfTrainConfig(rounds=2),
        )

    def to_dict(self) -> dict:
        def plain(v):
            if isinstance(v, tuple):
                return [plain(x) for x in v]
            return v

        def section(obj, keys=None):
            names = keys or [f.name for f in dataclasses.fields(obj)]
            return {k: plain(getattr(obj, k)) for k in names}

        return {
            "model": section(self.model),
            "train": section(self.train, _TRAIN_KEYS),
            "loss": section(self.train.weights),
            "augment": section(self.augment),
            "inference": section(self.inference),
            "selftrain": section(self.selftrain),
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def save(self, path) -> None:
        Path(path).write_text(self.to_yaml())


def _build(cls, data, section: str, allowed=None):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    names = set(allowed or (f.name for f in dataclasses.fields(cls)))
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in section {section!r}: {', '.join(unknown)}")
    data = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return data if cls is None else cls(**data)
    except TypeError as exc:
        raise ConfigError(f"section {section!r}: {exc}") from exc


def from_dict(doc: dict) -> RunConfig:
    doc = doc or {}
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a mapping of sections")
    sections = {"model", "train", "loss", "augment", "inference", "selftrain"}
    unknown = sorted(set(doc) - sections)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    aug = _build(AugmentConfig, doc.get("augment"), "augment")
    weights = _build(LossWeights, doc.get("loss"), "loss")
    train_kw = _build(None, doc.get("train"), "train", _TRAIN_KEYS)
    return RunConfig(
        model=_build(ModelConfig, doc.get("model"), "model"),
        train=_build(TrainConfig, {**train_kw, "weights": weights, "augment_cfg": aug}, "train",
                     _TRAIN_KEYS + ("weights", "augment_cfg")),
        augment=aug,
        inference=_build(InferenceConfig, doc.get("inference"), "inference"),
        selftrain=_build(SelfTrainConfig, doc.get("selftrain"), "selftrain"),
    )


def load_run_config(path) -> RunConfig:
    try:
        doc = yaml.load(Path(path).read_text(), Loader=_Loader)  # noqa: S506 - SafeLoader subclass
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    return from_dict(doc)
