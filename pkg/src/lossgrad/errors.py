"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad argument: wrong dimension, unsorted eigenvalues, non-positive step, ..."""


class NumericError(ArithmeticError):
    """A computation produced (or was fed) a non-finite value.

    ``record`` carries whatever partial telemetry the raising operation had
    assembled, e.g. a :class:`~lossgrad.core.StepRecord`.
    """

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class DegenerateError(ArithmeticError):
    """Input lies in a degenerate set where the formula is undefined."""


class DegenerateDirection(DegenerateError):
    """The search direction is orthogonal to the gradient."""


class FormatError(ValueError):
    """Malformed binary input (bad magic number, truncated payload)."""
