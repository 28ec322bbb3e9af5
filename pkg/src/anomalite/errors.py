"""Exception types shared across the package."""


class EngineError(Exception):
    """Base class for every error this package raises on purpose."""


class DimensionError(EngineError):
    """Tensor shapes do not line up for the requested operation."""


class ConfigError(EngineError):
    """A configuration value is missing, malformed, or inconsistent."""


class FormatError(EngineError):
    """A container file violates the on-disk format."""


class CorruptionError(FormatError):
    """A container file declares payload that is missing or inconsistent."""


class WeightValidationError(EngineError):
    """A weight set does not match the shapes a model config requires."""


class DegenerateDataError(EngineError):
    """An operation needs both classes present and got only one."""


class DecodeError(EngineError):
    """An image file could not be decoded."""
