"""
LOSSGRAD: locally optimal step-size adaptation for gradient descent.

After each step ``x -> x - h v`` the loss at the new point is compared with
the first-order prediction ``f(x) - h <grad f, v>``. The normalized shortfall
``r_h`` says on which side of the vertex of the fitted parabola

    W(t) = f(x) - t <grad f, v> + r_h <grad f, v> / h * t**2

the step landed: ``r_h <= 1/2`` means W was still decreasing at ``h`` so the
step size grows by ``c``; otherwise it shrinks by ``c``. The adjustment happens
*after* the step, so no copy of the parameters is needed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateDirection, NumericError, ValidationError
from .objective import FULL, Objective, as_params

DEFAULT_C = 1.05
DEFAULT_H0 = 1e-4
DEFAULT_GRAD_NORM_GUARD = 1e-12


@dataclass
class LossgradState:
    """Mutable optimizer state owned by a single training loop."""

    h: float = DEFAULT_H0
    c: float = DEFAULT_C
    grad_norm_guard: float = DEFAULT_GRAD_NORM_GUARD
    h_min: Optional[float] = None
    h_max: Optional[float] = None

    def __post_init__(self):
        if not (math.isfinite(self.h) and self.h > 0):
            raise ValidationError(f"step size must be positive and finite, got {self.h}")
        if not (math.isfinite(self.c) and self.c > 1):
            raise ValidationError(f"adjustment factor must exceed 1, got {self.c}")
        if not self.grad_norm_guard >= 0:
            raise ValidationError("grad_norm_guard must be non-negative")
        for name in ("h_min", "h_max"):
            bound = getattr(self, name)
            if bound is not None and not bound > 0:
                raise ValidationError(f"{name} must be positive, got {bound}")
        if self.h_min is not None and self.h_max is not None and self.h_min > self.h_max:
            raise ValidationError("h_min exceeds h_max")


@dataclass(frozen=True)
class StepRecord:
    loss_before: float
    loss_after: float
    grad_norm_sq: float
    directional_derivative: float
    r_h: Optional[float]
    h_used: float
    h_next: float
    skipped: bool = False


@dataclass(frozen=True)
class QuadraticModel:
    """W(t) = a0 + a1 t + a2 t^2, the parabola through (0, f(x)) and (h, f(x - h v))
    with slope ``-<grad f, v>`` at zero."""

    a0: float
    a1: float
    a2: float

    def __call__(self, t):
        return self.a0 + self.a1 * t + self.a2 * t * t

    def derivative(self, t):
        return self.a1 + 2.0 * self.a2 * t

    @property
    def minimizer(self) -> float:
        """Vertex of the parabola; ``inf`` when W is not strictly convex."""
        if self.a2 <= 0:
            return math.inf
        return -self.a1 / (2.0 * self.a2)


def orient_direction(gradient, v) -> np.ndarray:
    """Return ``v`` or ``-v``, whichever has a positive inner product with ``gradient``.

    Raises :class:`DegenerateDirection` when the two are exactly orthogonal.
    """
    g = as_params(gradient)
    d = as_params(v, g.size)
    dd = float(np.dot(g, d))
    if dd > 0:
        return d
    if dd < 0:
        return -d
    raise DegenerateDirection("direction is orthogonal to the gradient")


def compute_r_h(loss_before: float, loss_after: float, h: float, directional_derivative: float) -> float:
    """Normalized gap between the realized loss and its linear prediction."""
    if not all(math.isfinite(v) for v in (loss_before, loss_after, h, directional_derivative)):
        raise NumericError("non-finite input to compute_r_h")
    if not h > 0:
        raise ValidationError(f"h must be positive, got {h}")
    if not directional_derivative > 0:
        raise ValidationError("directional derivative must be positive")
    predicted_decrease = h * directional_derivative
    approx = loss_before - predicted_decrease
    return (loss_after - approx) / predicted_decrease


def quadratic_model(loss_before: float, directional_derivative: float, r_h: float, h: float) -> QuadraticModel:
    if not h > 0:
        raise ValidationError(f"h must be positive, got {h}")
    if not directional_derivative > 0:
        raise ValidationError("directional derivative must be positive")
    return QuadraticModel(
        a0=loss_before,
        a1=-directional_derivative,
        a2=r_h * directional_derivative / h,
    )


def model_derivative_at_h(directional_derivative: float, r_h: float) -> float:
    """W'(h) = <grad f, v> * (2 r_h - 1). Negative means the step could have been longer."""
    if not directional_derivative > 0:
        raise ValidationError("directional derivative must be positive")
    return directional_derivative * (-1.0 + 2.0 * r_h)


def adjust_step_size(state: LossgradState, r_h: float) -> float:
    """Next step size: ``h / c`` if ``r_h > 0.5`` else ``h * c``, then clamped to any bounds."""
    h = state.h / state.c if r_h > 0.5 else state.h * state.c
    if state.h_min is not None:
        h = max(h, state.h_min)
    if state.h_max is not None:
        h = min(h, state.h_max)
    return h


def lossgrad_step(
    state: LossgradState,
    obj: Objective,
    params,
    batch=FULL,
    direction=None,
) -> tuple[np.ndarray, StepRecord]:
    """Take one LOSSGRAD step and update ``state.h`` in place.

    Both losses are evaluated on the same ``batch``. With no ``direction`` the
    step follows the gradient. A step whose directional derivative is at or
    below ``state.grad_norm_guard`` is skipped: parameters and ``h`` are left
    untouched and the record has ``skipped=True``.

    Raises :class:`NumericError` (with ``.record`` set) if the loss becomes
    non-finite; ``state.h`` is not modified in that case.
    """
    x = as_params(params, obj.dim)
    h = state.h
    loss_before, grad = obj.eval_with_gradient(x, batch)
    grad_norm_sq = float(np.dot(grad, grad))

    def skipped(dd):
        return x, StepRecord(loss_before, loss_before, grad_norm_sq, dd, None, h, h, skipped=True)

    if not (math.isfinite(loss_before) and math.isfinite(grad_norm_sq)):
        raise NumericError(
            "non-finite loss or gradient before step",
            StepRecord(loss_before, math.nan, grad_norm_sq, math.nan, None, h, h),
        )

    if direction is None:
        v = grad
        dd = grad_norm_sq
    else:
        try:
            v = orient_direction(grad, direction)
        except DegenerateDirection:
            return skipped(0.0)
        dd = float(np.dot(grad, v))
    if dd <= state.grad_norm_guard:
        return skipped(dd)

    x_new = x - h * v
    loss_after = obj.eval(x_new, batch) if np.all(np.isfinite(x_new)) else math.nan
    if not math.isfinite(loss_after):
        raise NumericError(
            "non-finite loss after step",
            StepRecord(loss_before, loss_after, grad_norm_sq, dd, None, h, h),
        )

    r_h = compute_r_h(loss_before, loss_after, h, dd)
    state.h = adjust_step_size(state, r_h)
    return x_new, StepRecord(loss_before, loss_after, grad_norm_sq, dd, r_h, h, state.h)


class Lossgrad:
    """Stateful convenience wrapper around :func:`lossgrad_step`."""

    def __init__(self, h0: float = DEFAULT_H0, c: float = DEFAULT_C, **kwargs):
        self.state = LossgradState(h=h0, c=c, **kwargs)

    @property
    def h(self) -> float:
        return self.state.h

    def step(self, obj: Objective, params, batch=FULL, direction=None):
        return lossgrad_step(self.state, obj, params, batch, direction)
