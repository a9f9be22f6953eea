"""
Exact line search on positive quadratic forms.

For F(x) = x^T A x the minimizer of F along the gradient is available in
closed form once A is diagonal. In two dimensions one exact step is the map

    g(x) = (l2 - l1) / (l1^3 x1^2 + l2^3 x2^2) * x1 x2 * (l2^2 x2, -l1^2 x1)

and two steps scale x by a factor depending only on a = x1^2 / x2^2, which is
at most ((l1 - l2) / (l1 + l2))^2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateError, ValidationError
from .objective import as_params

SYMMETRY_TOL = 1e-10
PSD_TOL = 1e-10
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
BOUND_SLACK = 1e-12
PROPORTIONALITY_TOL = 1e-10


@dataclass(frozen=True)
class SpectralQuadratic:
    """Quadratic form sum_i lambdas[i] * x_i**2 with lambdas sorted descending."""

    lambdas: tuple[float, ...]

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lambdas)
        if not lam:
            raise ValidationError("need at least one eigenvalue")
        if any(not math.isfinite(v) or v < 0 for v in lam):
            raise ValidationError("eigenvalues must be finite and non-negative")
        if any(a < b for a, b in zip(lam, lam[1:])):
            raise ValidationError("eigenvalues must be sorted in descending order")
        object.__setattr__(self, "lambdas", lam)

    @property
    def dim(self) -> int:
        return len(self.lambdas)

    def value(self, x) -> float:
        x = as_params(x, self.dim)
        return float(np.dot(self.lambdas, x * x))

    def gradient(self, x) -> np.ndarray:
        x = as_params(x, self.dim)
        return 2.0 * np.asarray(self.lambdas) * x


@dataclass(frozen=True)
class ContractionReport:
    n_double_steps: int
    measured_ratio: float
    bound_ratio: float
    a_x: float
    holds: bool
    proportional: bool = True


def _off_diagonal_norm(a: np.ndarray) -> float:
    return math.sqrt(float(np.sum(a * a) - np.sum(np.diag(a) ** 2)))


def _rotate(a: np.ndarray, q: np.ndarray, p: int, r: int) -> None:
    """Annihilate a[p, r] with one Jacobi rotation, updating ``a`` and ``q`` in place."""
    apr = a[p, r]
    if apr == 0.0:
        return
    theta = (a[r, r] - a[p, p]) / (2.0 * apr)
    # smaller root of t^2 + 2 theta t - 1 = 0 keeps the rotation angle <= pi/4
    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
    c = 1.0 / math.sqrt(t * t + 1.0)
    s = t * c

    col_p = a[:, p].copy()
    col_r = a[:, r].copy()
    a[:, p] = c * col_p - s * col_r
    a[:, r] = s * col_p + c * col_r
    row_p = a[p, :].copy()
    row_r = a[r, :].copy()
    a[p, :] = c * row_p - s * row_r
    a[r, :] = s * row_p + c * row_r
    a[p, r] = a[r, p] = 0.0

    qp = q[:, p].copy()
    qr = q[:, r].copy()
    q[:, p] = c * qp - s * qr
    q[:, r] = s * qp + c * qr


def jacobi_eigh(A, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi sweeps.

    Returns ``(eigenvalues, Q)`` with eigenvectors in the columns of ``Q``,
    unsorted. Converged once the off-diagonal Frobenius norm drops below
    ``tol * max(1, ||A||_F)``.
    """
    a = np.array(A, dtype=np.float64)
    n = a.shape[0]
    q = np.eye(n)
    threshold = tol * max(1.0, float(np.linalg.norm(a)))
    for _ in range(max_sweeps):
        if _off_diagonal_norm(a) < threshold:
            return np.diag(a).copy(), q
        for p in range(n - 1):
            for r in range(p + 1, n):
                _rotate(a, q, p, r)
    if _off_diagonal_norm(a) < threshold:
        return np.diag(a).copy(), q
    raise DegenerateError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")


def diagonalize(A) -> tuple[SpectralQuadratic, np.ndarray]:
    """Orthonormal change of coordinates taking ``x^T A x`` to ``sum lambda_i y_i^2``.

    ``Q^T A Q = diag(lambdas)`` with ``lambdas`` descending. Tiny negative
    eigenvalues (down to ``-1e-10``) from round-off are clamped to zero.
    """
    a = np.array(A, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise ValidationError(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("matrix contains NaN or Inf")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > SYMMETRY_TOL * scale:
        raise ValidationError("matrix is not symmetric")

    evals, q = jacobi_eigh(a)
    if np.any(evals < -PSD_TOL * scale):
        raise ValidationError(f"matrix is not positive semi-definite (min eigenvalue {evals.min():.3g})")
    order = np.argsort(-evals, kind="stable")
    evals = np.clip(evals[order], 0.0, None)
    return SpectralQuadratic(tuple(evals)), q[:, order]


def _weighted_sums(q: SpectralQuadratic, x) -> tuple[np.ndarray, float, float]:
    x = as_params(x, q.dim)
    lam = np.asarray(q.lambdas)
    x2 = x * x
    num = float(np.dot(lam**2, x2))
    den = float(np.dot(lam**3, x2))
    if not den > 0:
        raise DegenerateError("x lies in the kernel of the form; the optimal step is undefined")
    return x, num, den


def exact_optimal_step(q: SpectralQuadratic, x) -> float:
    """argmin_t F(x - t grad F(x)) = (1/2) sum l^2 x^2 / sum l^3 x^2."""
    _, num, den = _weighted_sums(q, x)
    return 0.5 * num / den


def line_search_iterate(q: SpectralQuadratic, x) -> np.ndarray:
    """One exact-line-search gradient step."""
    x, num, den = _weighted_sums(q, x)
    t0 = 0.5 * num / den
    return x - t0 * 2.0 * np.asarray(q.lambdas) * x


def iteration_map_2d(lambda1: float, lambda2: float, x) -> np.ndarray:
    """The two-dimensional exact-step map g."""
    if not lambda1 >= lambda2 >= 0:
        raise ValidationError(f"need lambda1 >= lambda2 >= 0, got {lambda1}, {lambda2}")
    x1, x2 = as_params(x, 2)
    den = lambda1**3 * x1 * x1 + lambda2**3 * x2 * x2
    if not den > 0:
        raise DegenerateError("denominator l1^3 x1^2 + l2^3 x2^2 vanishes")
    if lambda1 == lambda2:
        return np.zeros(2)
    coef = (lambda2 - lambda1) / den * x1 * x2
    return np.array([coef * lambda2**2 * x2, -coef * lambda1**2 * x1])


def contraction_bound(lambda1: float, lambda2: float, n: int) -> float:
    return ((lambda1 - lambda2) / (lambda1 + lambda2)) ** (2 * n)


def worst_case_point(lambda1: float, lambda2: float, scale: float = 1.0) -> np.ndarray:
    """A point with x1^2 / x2^2 = lambda2^2 / lambda1^2, where the two-step factor is largest."""
    return scale * np.array([lambda2 / lambda1, 1.0])


def contraction_after_2n(lambda1: float, lambda2: float, x, n: int) -> ContractionReport:
    """Iterate g 2n times from ``x`` and compare the shrinkage with the bound.

    Also checks that g^{2n}(x) is parallel to ``x``. A point on a coordinate
    axis (x1 * x2 == 0) reaches the minimum in one step; it is reported with
    ``a_x = inf`` (or 0) and ratio 0 instead of going through the bound.
    """
    if int(n) != n or n < 1:
        raise ValidationError(f"n must be a positive integer, got {n}")
    n = int(n)
    if not lambda1 >= lambda2 > 0:
        raise ValidationError(f"need lambda1 >= lambda2 > 0, got {lambda1}, {lambda2}")
    x = as_params(x, 2)
    norm_x = float(np.linalg.norm(x))
    if norm_x == 0:
        raise DegenerateError("x must be nonzero")
    bound = contraction_bound(lambda1, lambda2, n)
    a_x = math.inf if x[1] == 0 else float(x[0] ** 2 / x[1] ** 2)

    y = x
    for _ in range(2 * n):
        if not np.any(y):
            break
        y = iteration_map_2d(lambda1, lambda2, y)
    norm_y = float(np.linalg.norm(y))
    measured = norm_y / norm_x
    cross = abs(x[0] * y[1] - x[1] * y[0])
    proportional = cross <= PROPORTIONALITY_TOL * norm_x * norm_y or norm_y == 0.0
    return ContractionReport(
        n_double_steps=n,
        measured_ratio=measured,
        bound_ratio=bound,
        a_x=a_x,
        holds=measured <= bound + BOUND_SLACK,
        proportional=proportional,
    )


def two_step_factor(lambda1: float, lambda2: float, a_x: float) -> float:
    """K_x: the scalar with g(g(x)) = K_x x, as a function of a_x = x1^2 / x2^2."""
    num = (lambda2 - lambda1) ** 2 * lambda1 * lambda2
    den = (lambda1**2 + lambda2**2) * lambda1 * lambda2 + lambda1**4 * a_x + lambda2**4 / a_x
    return num / den


def spectral_from(lambdas: Sequence[float]) -> SpectralQuadratic:
    return SpectralQuadratic(tuple(lambdas))
