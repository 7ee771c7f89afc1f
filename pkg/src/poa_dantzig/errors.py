"""Exception types raised by the library."""


class DantzigError(Exception):
    """Base class for all library errors."""


class DimensionError(DantzigError, ValueError):
    """Array shapes or sizes are inconsistent."""


class SingularNormalization(DantzigError, ArithmeticError):
    """A column of the sensing-dictionary product has (near) zero norm."""


class NoConvergence(DantzigError, RuntimeError):
    """An iterative routine exhausted its iteration budget."""


class FormatError(DantzigError, ValueError):
    """A data file row could not be parsed."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class CountError(DantzigError, ValueError):
    """A data file does not hold the expected number of examples."""


class RankError(DantzigError, ValueError):
    """A training matrix has lower rank than the requested component count."""


class DegenerateScores(DantzigError, ArithmeticError):
    """Class residual scores do not single out a pair of labels."""
