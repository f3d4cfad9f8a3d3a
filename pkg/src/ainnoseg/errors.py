"""Exception hierarchy shared across the package."""


class AinnoSegError(Exception):
    """Base class for every error raised by ainnoseg."""


class ShapeError(AinnoSegError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(AinnoSegError, ValueError):
    """A configuration value violates its contract."""


class DataError(AinnoSegError, ValueError):
    """Input data is malformed or out of range."""


class NumericError(AinnoSegError, ArithmeticError):
    """A computation produced NaN or Inf."""


class ContractError(AinnoSegError, RuntimeError):
    """An operation was called in a state its contract forbids."""


class IntegrityError(AinnoSegError):
    """A persisted artifact is missing or fails its checksum."""
