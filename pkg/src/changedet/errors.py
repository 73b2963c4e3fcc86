"""Exception types shared across the package.

The CLI maps these onto exit codes: anything that means "the user gave us
bad input or an inconsistent configuration" exits 1, unexpected runtime
failures exit 2.
"""


class ChangeDetError(Exception):
    """Base class for package-specific errors."""


class ShapeError(ChangeDetError, ValueError):
    """Tensor or array shapes are inconsistent with the requested op."""


class PrecisionError(ChangeDetError, TypeError):
    """Mixed float32/float64 operands. Promotion is never implicit."""


class ConfigError(ChangeDetError, ValueError):
    """A configuration value violates its documented constraints."""


class ImageFormatError(ChangeDetError, ValueError):
    """An image file could not be parsed or has unsupported properties."""


class WeightFormatError(ChangeDetError):
    """Base class for weight-file problems."""


class WeightMagicError(WeightFormatError):
    """The file does not start with the expected magic bytes."""


class WeightVersionError(WeightFormatError):
    """The file uses an unsupported format version."""


class WeightShapeError(WeightFormatError):
    """A stored tensor's name or shape does not match the target model."""


class WeightTruncatedError(WeightFormatError):
    """The payload ends early or carries unexplained trailing bytes."""


class TrainingDiverged(ChangeDetError, RuntimeError):
    """A non-finite value appeared during optimisation."""
