"""
Differentiable objectives.

An :class:`Objective` maps a parameter vector (1-D float64 array) and a batch
to a scalar loss, and optionally its gradient. Deterministic objectives ignore
the batch; dataset-backed objectives treat it as a row index set. ``FULL``
(``None``) selects every row.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import NumericError, ValidationError

FULL = None
"""Batch sentinel meaning "all samples" (the only batch deterministic objectives see)."""


class EvalResult(NamedTuple):
    loss: float
    gradient: np.ndarray


def as_params(values, dim: Optional[int] = None) -> np.ndarray:
    """Copy ``values`` into a finite float64 vector, checking its length against ``dim``."""
    x = np.array(values, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError(f"parameter vector must be 1-D, got shape {x.shape}")
    if dim is not None and x.shape[0] != dim:
        raise ValidationError(f"expected {dim} parameters, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("parameter vector contains NaN or Inf")
    return x


def check_batch(batch, n_rows: int) -> np.ndarray | slice:
    """Normalize a batch to something usable for row indexing."""
    if batch is FULL:
        return slice(None)
    idx = np.asarray(batch)
    if idx.ndim != 1 or idx.size == 0:
        raise ValidationError("batch must be a non-empty 1-D index sequence")
    if not np.issubdtype(idx.dtype, np.integer):
        raise ValidationError("batch indices must be integers")
    if idx.min() < 0 or idx.max() >= n_rows:
        raise ValidationError(f"batch index out of range [0, {n_rows})")
    return idx


class Objective(ABC):
    """Scalar function of a parameter vector.

    Subclasses implement :meth:`_loss` and :meth:`_loss_and_gradient`; the
    public methods validate the input. ``eval`` and ``eval_with_gradient`` must
    compute the loss through the same arithmetic so the two agree bitwise.
    """

    dim: int

    def eval(self, params, batch=FULL) -> float:
        return self._loss(as_params(params, self.dim), batch)

    def eval_with_gradient(self, params, batch=FULL) -> EvalResult:
        loss, grad = self._loss_and_gradient(as_params(params, self.dim), batch)
        return EvalResult(loss, grad)

    @abstractmethod
    def _loss(self, x: np.ndarray, batch) -> float: ...

    @abstractmethod
    def _loss_and_gradient(self, x: np.ndarray, batch) -> tuple[float, np.ndarray]: ...


class QuadraticObjective(Objective):
    """F(x) = sum_i lambda_i * x_i**2, already in the eigenbasis."""

    def __init__(self, lambdas: Sequence[float]):
        lam = np.array(lambdas, dtype=np.float64)
        if lam.ndim != 1 or lam.size == 0:
            raise ValidationError("lambdas must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(lam)) or np.any(lam < 0):
            raise ValidationError("lambdas must be finite and non-negative")
        if np.any(np.diff(lam) > 0):
            raise ValidationError("lambdas must be sorted in descending order")
        self.lambdas = lam
        self.dim = lam.size

    def _loss(self, x, batch):
        return float(np.dot(self.lambdas, x * x))

    def _loss_and_gradient(self, x, batch):
        return self._loss(x, batch), 2.0 * self.lambdas * x

    def __repr__(self):
        return f"QuadraticObjective(lambdas={self.lambdas.tolist()})"


class LinearObjective(Objective):
    """f(x) = <a, x>. Unbounded below; its gradient-direction restriction is exactly linear."""

    def __init__(self, a: Sequence[float]):
        self.a = as_params(a)
        if self.a.size == 0:
            raise ValidationError("coefficient vector must be non-empty")
        self.dim = self.a.size

    def _loss(self, x, batch):
        return float(np.dot(self.a, x))

    def _loss_and_gradient(self, x, batch):
        return self._loss(x, batch), self.a.copy()


class RosenbrockObjective(Objective):
    """Chained Rosenbrock: sum_i 100 (x_{i+1} - x_i^2)^2 + (1 - x_i)^2."""

    def __init__(self, n: int):
        if int(n) != n or n < 2:
            raise ValidationError(f"Rosenbrock needs n >= 2, got {n}")
        self.dim = int(n)

    def _loss(self, x, batch):
        head, tail = x[:-1], x[1:]
        return float(np.sum(100.0 * (tail - head**2) ** 2 + (1.0 - head) ** 2))

    def _loss_and_gradient(self, x, batch):
        head, tail = x[:-1], x[1:]
        inner = tail - head**2
        grad = np.zeros_like(x)
        grad[:-1] = -400.0 * head * inner - 2.0 * (1.0 - head)
        grad[1:] += 200.0 * inner
        return self._loss(x, batch), grad


class LeastSquaresObjective(Objective):
    """Mean squared residual ``mean((D x - t)**2)`` over the batch rows."""

    def __init__(self, design, targets):
        D = np.array(design, dtype=np.float64)
        t = np.array(targets, dtype=np.float64)
        if D.ndim != 2 or t.ndim != 1 or D.shape[0] != t.shape[0]:
            raise ValidationError(
                f"design {D.shape} and targets {t.shape} do not match row-for-row"
            )
        if D.shape[0] == 0:
            raise ValidationError("least squares needs at least one row")
        self.design = D
        self.targets = t
        self.dim = D.shape[1]
        self.n_samples = D.shape[0]

    def _residual(self, x, batch):
        rows = check_batch(batch, self.n_samples)
        D = self.design[rows]
        return D, D @ x - self.targets[rows]

    def _loss(self, x, batch):
        _, r = self._residual(x, batch)
        return float(np.mean(r * r))

    def _loss_and_gradient(self, x, batch):
        D, r = self._residual(x, batch)
        loss = float(np.mean(r * r))
        return loss, (2.0 / r.shape[0]) * (D.T @ r)


def quadratic_objective(lambdas: Sequence[float]) -> QuadraticObjective:
    return QuadraticObjective(lambdas)


def linear_objective(a: Sequence[float]) -> LinearObjective:
    return LinearObjective(a)


def rosenbrock_objective(n: int) -> RosenbrockObjective:
    return RosenbrockObjective(n)


def least_squares_objective(design, targets) -> LeastSquaresObjective:
    return LeastSquaresObjective(design, targets)


def finite_difference_gradient(obj: Objective, params, batch=FULL, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient, one coordinate at a time.

    Independent of every analytic gradient in the package; used as the test
    oracle for them.
    """
    if not eps > 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    x = as_params(params, obj.dim)
    grad = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += eps
        xm[i] -= eps
        fp = obj.eval(xp, batch)
        fm = obj.eval(xm, batch)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite evaluation at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * eps)
    return grad
