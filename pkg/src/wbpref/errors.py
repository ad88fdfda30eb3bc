"""Exception hierarchy shared by all wbpref modules.

Every error raised on purpose derives from WbprefError, so callers (and the
CLI) can separate expected failures from bugs. Exit-code mapping lives in
cli.py: usage/config -> 1, data/parse -> 2, numeric -> 3.
"""


class WbprefError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(WbprefError):
    """Input is outside an operation's mathematical domain (zero norm, ...)."""


class UsageError(WbprefError):
    """API misuse: mismatched color-space tags, wrong model kind, ..."""


class ConfigError(WbprefError):
    """Invalid configuration value or an impossible run request."""


class NumericError(WbprefError):
    """Numerical failure: singular matrix, non-finite intermediate, ..."""


class GamutError(DomainError):
    """Chromaticity outside the Robertson table's validity region."""


class ParseError(WbprefError):
    """Malformed input file. Carries human-readable location context."""

    def __init__(self, message, *, line=None, offset=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if offset is not None:
            loc.append(f"byte offset {offset}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.line = line
        self.offset = offset


class FitError(WbprefError):
    """Least-squares fit impossible (rank-deficient design, too few pairs)."""
