"""Exception types shared across the library."""


class RevoxError(Exception):
    """Base class for all library errors."""


class InvalidInputError(RevoxError, ValueError):
    """An argument violates an operation's contract."""


class FormatError(InvalidInputError):
    """A file has an unsupported encoding or layout."""


class ConfigError(RevoxError):
    """A configuration value is missing, unknown, or out of range."""


class DivergenceError(RevoxError):
    """Training produced a non-finite loss."""
