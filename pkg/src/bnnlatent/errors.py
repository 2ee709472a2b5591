"""Exception hierarchy shared across the package."""


class BnnLatentError(Exception):
    """Base class for all package errors."""


# linalg
class NotPositiveDefinite(BnnLatentError, ArithmeticError):
    pass


class NonSymmetric(BnnLatentError, ValueError):
    pass


class NoConvergence(BnnLatentError, ArithmeticError):
    pass


class EmptyInput(BnnLatentError, ValueError):
    pass


# model
class DegenerateColumn(BnnLatentError, ArithmeticError):
    """A raw first-layer column is too short to normalize."""


class DimensionMismatch(BnnLatentError, ValueError):
    pass


class NonPositiveVariance(BnnLatentError, ValueError):
    pass


# anchors
class InvalidCount(BnnLatentError, ValueError):
    pass


class TooFewPoints(BnnLatentError, ValueError):
    pass


class NonFiniteLoss(BnnLatentError, ArithmeticError):
    pass


# sampler
class AdaptationFailed(BnnLatentError, RuntimeError):
    pass


class InitializationFailed(BnnLatentError, RuntimeError):
    pass


# analysis
class TooFewDraws(BnnLatentError, ValueError):
    pass


class SizeMismatch(BnnLatentError, ValueError):
    pass


class IndexOutOfRange(BnnLatentError, IndexError):
    pass


# data
class ParseError(BnnLatentError, ValueError):
    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class MissingValue(ParseError):
    pass
