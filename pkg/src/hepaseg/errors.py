"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(ValueError):
    """An input holds NaN or Inf where finite values are required."""

class StageError(ValueError):
    """A preprocessing op received a slice from the wrong pipeline stage."""


class CorruptFileError(IOError):
    """An on-disk artifact does not match the size promised by its header."""


class FormatError(ValueError):
    """An on-disk artifact violates the format contract (labels, magic, manifest)."""


class ConfigError(ValueError):
    """A configuration value is outside its documented domain."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""
