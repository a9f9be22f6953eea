"""LOSSGRAD: gradient descent that adapts its step size from one extra loss evaluation."""

from .core import (
    Lossgrad,
    LossgradState,
    QuadraticModel,
    StepRecord,
    adjust_step_size,
    compute_r_h,
    lossgrad_step,
    model_derivative_at_h,
    orient_direction,
    quadratic_model,
)
from .errors import DegenerateDirection, DegenerateError, FormatError, NumericError, ValidationError
from .objective import (
    FULL,
    EvalResult,
    Objective,
    finite_difference_gradient,
    least_squares_objective,
    linear_objective,
    quadratic_objective,
    rosenbrock_objective,
)

__version__ = "0.1.0"
