"""Exception types shared across the package."""


class UlwError(Exception):
    """Base class for every error this package raises on purpose."""


class ShapeError(UlwError, ValueError):
    """An array has the wrong shape; the message names the offending dimension."""


class NumericError(UlwError, ArithmeticError):
    """A numeric-domain violation (zero denominator, non-finite values); names the op."""


class ConfigError(UlwError, ValueError):
    """An invalid configuration value or combination of values."""


class UsageError(UlwError, ValueError):
    """A caller violated an API precondition (bad argument, missing gradient, ...)."""


class CheckpointError(UlwError, ValueError):
    """A malformed checkpoint container.  Carries the byte offset of the failure."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ImageIOError(UlwError, IOError):
    """An image file could not be read or has an unsupported format; names the file."""
