"""Exception hierarchy for the toolkit.

``FormatError`` and its subclasses cover unreadable or corrupt files;
``ValidationError`` covers structurally readable data that violates an
invariant. CLI maps any ``UnitAccentError`` to exit code 2.
"""


class UnitAccentError(Exception):
    """Base class for all toolkit errors."""


class FormatError(UnitAccentError):
    """File cannot be parsed at the byte/JSON level."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class TruncatedFileError(FormatError):
    """File ends before the declared payload is complete."""


class ValidationError(UnitAccentError):
    """Data violates a documented invariant."""
