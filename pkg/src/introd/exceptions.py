"""Exception hierarchy shared across the package."""


class IntroDError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(IntroDError, ValueError):
    pass


class DimensionError(IntroDError, ValueError):
    pass


class InvalidConfigError(IntroDError, ValueError):
    pass


class InvalidSampleError(IntroDError, ValueError):
    pass


class OracleFailureError(IntroDError, ArithmeticError):
    pass


class TrainingDivergedError(IntroDError, ArithmeticError):
    """Raised when a loss or gradient becomes non-finite during training."""

    def __init__(self, message, epoch=None):
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")
        self.epoch = epoch


class FormatError(IntroDError, ValueError):
    """Raised for malformed or incompatible on-disk artifacts.

    ``offset`` is the 1-based line number (or byte offset for binary payloads)
    at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (at offset {offset})")
        self.offset = offset


class MissingInputError(IntroDError, FileNotFoundError):
    """A required dataset or checkpoint does not exist."""
