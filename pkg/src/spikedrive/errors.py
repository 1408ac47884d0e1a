"""Exception hierarchy shared by all spikedrive modules."""


class SpikeDriveError(Exception):
    """Base class for every error raised by this package."""


class DegenerateRangeError(SpikeDriveError):
    """Quantization range collapsed (constant matrix or all-zero magnitude)."""


class OutOfRangeError(SpikeDriveError):
    """Integer values fall outside the grid implied by their parameters."""


class NotPowerOfTwoError(SpikeDriveError):
    """A transform dimension is not a power of two."""


class DimMismatchError(SpikeDriveError):
    """Operand dimensions are incompatible."""


class ShapeMismatchError(SpikeDriveError):
    """Two matrices that must share a shape do not."""


class EmptySubsetError(SpikeDriveError):
    """A required index subset is empty."""


class EmptyInputError(SpikeDriveError):
    """An operation received an empty matrix."""


class CountOutOfRangeError(SpikeDriveError):
    """Spike counts exceed the alphabet of the encoding configuration."""


class IntegerOverflowError(SpikeDriveError):
    """An exact integer accumulation cannot be guaranteed overflow-free."""


class WrongModeError(SpikeDriveError):
    """A stateful object was used in a mode that forbids the operation."""


class NotCalibratedError(SpikeDriveError):
    """Inference-time use of a clip threshold that was never calibrated."""


class MissingRateError(SpikeDriveError):
    """A spike cost estimate was requested without a firing rate."""


class FormatError(SpikeDriveError):
    """A serialized artifact failed to parse (bad magic, version, or length)."""


class ConfigError(SpikeDriveError):
    """A run configuration failed validation."""
