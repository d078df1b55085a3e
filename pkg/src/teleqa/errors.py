"""Exception types shared across the package.

The CLI maps these onto exit codes: ``FormatError`` and ``OSError`` are I/O
failures (1), ``ConfigError`` and plain ``ValueError`` are validation
failures (2), ``NumericalOverflowError`` is a numerical failure (3).
"""


class FormatError(ValueError):
    """A file on disk does not match its declared layout."""


class ConfigError(ValueError):
    """Configuration is malformed or inconsistent with loaded weights."""


class NumericalOverflowError(ArithmeticError):
    """A forward or backward pass produced a non-finite value."""
