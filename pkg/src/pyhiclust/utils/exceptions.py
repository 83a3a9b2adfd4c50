from typing import Optional


class PyHiClustError(Exception):
    """Base class for every error raised by pyhiclust."""


class InvalidArgumentError(PyHiClustError, ValueError):
    pass


class InvalidStateError(PyHiClustError, RuntimeError):
    pass


class InvariantError(PyHiClustError, RuntimeError):
    """An internal invariant was violated (e.g. an all-zero posterior)."""


class NumericError(PyHiClustError, ArithmeticError):
    pass


class ParseError(InvalidArgumentError):
    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class CheckpointFormatError(PyHiClustError, ValueError):
    pass


class ConfigError(PyHiClustError, ValueError):
    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class DatasetMismatchError(InvalidArgumentError):
    """Checkpoint and dataset disagree (input shape, topology, labels)."""
