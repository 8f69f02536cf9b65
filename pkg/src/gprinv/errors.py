"""Exception hierarchy shared across the package."""


class GprInvError(Exception):
    """Base class for all package errors."""


class ShapeError(GprInvError, ValueError):
    """Incompatible array shapes. ``axis`` names the offending axis when known."""

    def __init__(self, message, axis=None):
        super().__init__(message)
        self.axis = axis


class DivisibilityError(ShapeError):
    """Spatial extent not divisible by the encoder's total downsampling factor."""


class ConfigError(GprInvError, ValueError):
    """Invalid configuration; ``key`` is the dotted path of the bad entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class NonFiniteError(GprInvError, FloatingPointError):
    pass


class StatisticsError(GprInvError, RuntimeError):
    """Batch norm used in inference mode before any statistics were gathered."""


class FormatError(GprInvError):
    """Base for binary file format problems."""


class BadMagicError(FormatError):
    pass


class BadVersionError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class DimOverflowError(FormatError):
    pass


class CheckpointCorruptError(FormatError):
    pass


class ArchitectureMismatchError(GprInvError):
    pass
