"""Exception types shared across the package."""


class PlaceDescError(Exception):
    """Base class for all package errors."""


class ShapeError(PlaceDescError, ValueError):
    """Tensor rank or dimension mismatch."""


class ArchitectureError(PlaceDescError, ValueError):
    """Architecture geometry cannot be realized."""


class ConfigError(PlaceDescError, ValueError):
    """Invalid or incomplete configuration."""


class FormatError(PlaceDescError, ValueError):
    """Malformed or corrupt on-disk container."""


class DataError(PlaceDescError, ValueError):
    """Dataset or ground-truth inconsistency."""


class NumericError(PlaceDescError, ArithmeticError):
    """Non-finite values or degenerate numeric input."""
