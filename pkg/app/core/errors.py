"""
Exception hierarchy for the QRNG toolkit.

All errors derive from ValueError so callers can catch them the same way
they catch bad input values.
"""

from typing import Optional


class QrngError(ValueError):
    """Base class for all toolkit errors."""


class DomainError(QrngError):
    """A mathematical precondition does not hold (e.g. non-positive variance)."""


class InputError(QrngError):
    """Malformed input data: wrong width, non-finite values, bad file format."""


class ConfigurationError(QrngError):
    """Invalid configuration or extractor wiring."""

    def __init__(self, message: str, source: Optional[str] = None, line: Optional[int] = None):
        self.source = source
        self.line = line
        if source is not None and line is not None:
            message = f"{source}:{line}: {message}"
        elif source is not None:
            message = f"{source}: {message}"
        super().__init__(message)


class InsufficientDataError(InputError):
    """Not enough samples or bits for a statistical procedure."""

    def __init__(self, what: str, required: int, actual: int):
        self.required = required
        self.actual = actual
        super().__init__(f"{what} requires at least {required} items, got {actual}")
