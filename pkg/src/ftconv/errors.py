"""Exception hierarchy shared across the package."""


class FTConvError(Exception):
    """Base class for all package errors."""


class ShapeError(FTConvError, ValueError):
    """Tensor dimensions are inconsistent with the requested operation."""


class ConfigError(FTConvError, ValueError):
    """A layer or model configuration is invalid (e.g. non-integral output size)."""


class UnsupportedError(FTConvError, NotImplementedError):
    """The operation is defined but not supported for these parameters."""


class ChecksumError(FTConvError, RuntimeError):
    """Internal consistency error while building checksums."""


class FaultSpecError(FTConvError, ValueError):
    """A fault specification does not fit the dimensions it targets."""


class WeightFileError(FTConvError, OSError):
    """A weight file is malformed or does not match its model config."""


class IntegrityError(FTConvError, RuntimeError):
    """A layer could not be brought to a verified state, even after recompute."""
