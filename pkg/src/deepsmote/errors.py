"""Exception hierarchy shared across the package."""


class DeepSmoteError(Exception):
    """Base class for all package errors."""


class ShapeError(DeepSmoteError, ValueError):
    """A tensor or layer shape does not match what an operation expects."""

    def __init__(self, message, layer=None):
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)
        self.layer = layer


class NumericError(DeepSmoteError, FloatingPointError):
    """NaN or Inf encountered where a finite value is required."""


class CacheMismatchError(DeepSmoteError, ValueError):
    """A forward cache does not belong to the network passed to backward."""


class IdxParseError(DeepSmoteError, ValueError):
    """Malformed IDX file. ``offset`` is the byte position of the fault."""

    def __init__(self, message, path=None, offset=0):
        where = f"{path}: " if path is not None else ""
        super().__init__(f"{where}{message} (at byte offset {offset})")
        self.path = path
        self.offset = offset


class InfeasibleError(DeepSmoteError, ValueError):
    """Requested counts cannot be drawn from the available data."""


class ClassSizeError(DeepSmoteError, ValueError):
    """A class has too few members for the requested operation."""


class LabelError(DeepSmoteError, ValueError):
    """Labels are out of range or violate a single-class requirement."""


class ConfigError(DeepSmoteError, ValueError):
    """Invalid run configuration. ``field`` is the dotted path of the bad entry."""

    def __init__(self, message, field=None):
        if field:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field
