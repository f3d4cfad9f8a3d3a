"""Desk-scale semantic segmentation: HRNet-style backbone, dual attention,
object-contextual heads, mosaic augmentation, multi-scale inference and
teacher/student self-training, on a small numpy autodiff engine."""

from .errors import (AinnoSegError, ConfigError, ContractError, DataError, IntegrityError, NumericError,
                     ShapeError)
from .model import ModelConfig, SegModel

__version__ = "0.1.0"

__all__ = ["AinnoSegError", "ConfigError", "ContractError", "DataError", "IntegrityError", "ModelConfig",
           "NumericError", "SegModel", "ShapeError", "__version__"]
