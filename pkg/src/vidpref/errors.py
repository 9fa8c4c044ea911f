"""Error types shared across the package.

Anything raised on a bad user-supplied file, config, or pipeline state
derives from :class:`VidprefError` so the CLI can map it to exit code 1.
Plain ``ValueError`` is used for bad in-process arguments (wrong shapes,
out-of-range scalars).
"""

from __future__ import annotations


class VidprefError(Exception):
    """Base class for package errors."""


class ConfigurationError(VidprefError):
    """Invalid configuration values or combinations."""


class DataError(VidprefError):
    """Inconsistent or invalid data (duplicate ids, broken invariants)."""


class ParseError(DataError):
    """Malformed persisted file; message names the offending line."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class StateError(VidprefError):
    """Operation invoked on objects in the wrong state (e.g. unscored records)."""


class NumericError(VidprefError):
    """Non-finite value in a numeric computation; message names the term."""
