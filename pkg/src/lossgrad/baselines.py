"""
Comparison optimizers and the golden-section line search.

SGD runs on a per-epoch schedule (constant, step decay, or trapezoid).
WNGrad keeps a single scalar accumulator ``b`` that only grows, so its step
size ``1/b`` only shrinks.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NumericError, ValidationError
from .objective import FULL, Objective, as_params

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ScheduleSpec:
    """Learning-rate schedule over epochs.

    kind="constant": the base rate throughout.
    kind="step": base * factor**k, k = number of milestones <= epoch.
    kind="trapezoid": 0 -> peak linearly on [0, warmup_end], flat until
    plateau_end, then linearly to ``final`` at ``end`` and flat after. The
    base rate is ignored. ``end`` defaults to ``2 * plateau_end - warmup_end``.
    """

    kind: str = "constant"
    milestones: tuple[int, ...] = ()
    factor: float = 0.1
    warmup_end: float = 0.0
    plateau_end: float = 0.0
    peak: float = 1.0
    final: float = 0.0
    end: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("constant", "step", "trapezoid"):
            raise ValidationError(f"unknown schedule kind {self.kind!r}")
        object.__setattr__(self, "milestones", tuple(self.milestones))
        if self.kind == "step":
            if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
                raise ValidationError("milestones must be strictly increasing")
            if not self.factor > 0:
                raise ValidationError("step factor must be positive")
        if self.kind == "trapezoid":
            if not 0 <= self.warmup_end <= self.plateau_end:
                raise ValidationError("need 0 <= warmup_end <= plateau_end")
            if not self.peak > 0 or self.final < 0:
                raise ValidationError("trapezoid needs peak > 0 and final >= 0")
            if self.end is not None and self.end <= self.plateau_end:
                raise ValidationError("trapezoid end must come after plateau_end")

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "ScheduleSpec":
        return cls(**d) if d else cls()


def schedule_lr(spec: ScheduleSpec, base: float, epoch: float) -> float:
    if epoch < 0:
        raise ValidationError(f"epoch must be non-negative, got {epoch}")
    if spec.kind == "constant":
        return base
    if spec.kind == "step":
        return base * spec.factor ** bisect.bisect_right(spec.milestones, epoch)

    if epoch <= spec.warmup_end:
        return spec.peak * epoch / spec.warmup_end if spec.warmup_end > 0 else spec.peak
    if epoch <= spec.plateau_end:
        return spec.peak
    end = spec.end if spec.end is not None else 2 * spec.plateau_end - spec.warmup_end
    if end <= spec.plateau_end or epoch >= end:
        return spec.final
    frac = (epoch - spec.plateau_end) / (end - spec.plateau_end)
    return spec.peak + (spec.final - spec.peak) * frac


@dataclass
class SgdConfig:
    learning_rate: float
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)

    def __post_init__(self):
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ValidationError(f"learning rate must be positive, got {self.learning_rate}")

    def lr(self, epoch: float) -> float:
        return schedule_lr(self.schedule, self.learning_rate, epoch)


def sgd_update(cfg: SgdConfig, epoch: int, obj: Objective, params, batch=FULL):
    """Like :func:`sgd_step` but also returns the gradient norm squared."""
    x = as_params(params, obj.dim)
    loss, grad = obj.eval_with_gradient(x, batch)
    grad_norm_sq = float(np.dot(grad, grad))
    if not (math.isfinite(loss) and math.isfinite(grad_norm_sq)):
        raise NumericError("non-finite loss or gradient in SGD step")
    return x - cfg.lr(epoch) * grad, loss, grad_norm_sq


def sgd_step(cfg: SgdConfig, epoch: int, obj: Objective, params, batch=FULL) -> tuple[np.ndarray, float]:
    """Plain gradient step at the scheduled rate. Returns the pre-step loss."""
    x_new, loss, _ = sgd_update(cfg, epoch, obj, params, batch)
    return x_new, loss


@dataclass
class WngradState:
    """Global (not per-coordinate) WNGrad. ``b`` starts at ``1 / initial_lr``."""

    initial_lr: float
    b: Optional[float] = None

    def __post_init__(self):
        if not (math.isfinite(self.initial_lr) and self.initial_lr > 0):
            raise ValidationError(f"initial_lr must be positive, got {self.initial_lr}")
        if self.b is None:
            self.b = 1.0 / self.initial_lr
        if not self.b > 0:
            raise ValidationError("accumulator b must be positive")

    @property
    def step_size(self) -> float:
        return 1.0 / self.b


def wngrad_update(state: WngradState, obj: Objective, params, batch=FULL):
    """Like :func:`wngrad_step` but also returns the gradient norm squared."""
    x = as_params(params, obj.dim)
    loss, grad = obj.eval_with_gradient(x, batch)
    grad_norm_sq = float(np.dot(grad, grad))
    if not (math.isfinite(loss) and math.isfinite(grad_norm_sq)):
        raise NumericError("non-finite loss or gradient in WNGrad step")
    x_new = x - grad / state.b
    state.b = state.b + grad_norm_sq / state.b
    return x_new, loss, grad_norm_sq


def wngrad_step(state: WngradState, obj: Objective, params, batch=FULL) -> tuple[np.ndarray, float]:
    """Step with size ``1/b``, then grow ``b`` by ``||grad||^2 / b``.

    The first step therefore uses exactly ``initial_lr``.
    """
    x_new, loss, _ = wngrad_update(state, obj, params, batch)
    return x_new, loss


def golden_section_line_search(
    obj: Objective,
    params,
    batch=FULL,
    direction=None,
    t_max: float = 1.0,
    tol: float = 1e-8,
) -> float:
    """Minimize ``phi(t) = f(x - t * direction)`` over ``[0, t_max]``.

    Exact to within ``tol`` for unimodal ``phi``; otherwise returns some local
    minimizer. Endpoints are compared at the end so a monotone ``phi`` yields
    the boundary itself. ``direction`` defaults to the gradient at ``params``.
    """
    if not tol > 0:
        raise ValidationError(f"tol must be positive, got {tol}")
    if not t_max > 0:
        raise ValidationError(f"t_max must be positive, got {t_max}")
    x = as_params(params, obj.dim)
    if direction is None:
        d = obj.eval_with_gradient(x, batch).gradient
    else:
        d = as_params(direction, obj.dim)

    def phi(t):
        return obj.eval(x - t * d, batch)

    a, b = 0.0, float(t_max)
    c = b - INV_PHI * (b - a)
    e = a + INV_PHI * (b - a)
    fc, fe = phi(c), phi(e)
    while b - a > tol:
        if fc < fe:
            b, e, fe = e, c, fc
            c = b - INV_PHI * (b - a)
            fc = phi(c)
        else:
            a, c, fc = c, e, fe
            e = a + INV_PHI * (b - a)
            fe = phi(e)

    t = 0.5 * (a + b)
    candidates = [(phi(t), t)]
    if a == 0.0:
        candidates.append((phi(0.0), 0.0))
    if b == t_max:
        candidates.append((phi(t_max), float(t_max)))
    return min(candidates, key=lambda p: p[0])[1]
