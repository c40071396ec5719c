"""Exception hierarchy shared by every module."""


class S8BQError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(S8BQError, ValueError):
    """Input data violates an operation's precondition."""


class InvalidCodebookError(S8BQError, ValueError):
    """A codebook is inconsistent (bad bit width, too many centroids, ...)."""


class FormatError(S8BQError):
    """A serialized stream has a bad magic, version or header field."""


class CorruptionError(FormatError):
    """A serialized stream is truncated, over-long or has bad payload bits."""


class DivergenceError(S8BQError, ArithmeticError):
    """Training produced a non-finite loss or parameter."""
