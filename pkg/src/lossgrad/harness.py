"""
Experiment runner: training loop, per-step traces, summaries and sweeps.

A run is fully determined by its :class:`ExperimentConfig` (including the
seed), so two runs with the same config write byte-identical trace files.
The ``LOSSGRAD_SEED`` environment variable, when set, replaces the config seed.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .baselines import ScheduleSpec, SgdConfig, WngradState, sgd_update, wngrad_update
from .core import DEFAULT_C, DEFAULT_H0, LossgradState, lossgrad_step
from .errors import NumericError, ValidationError
from .nn import Dataset, MlpSpec, init_params, load_idx, make_blobs, mlp_objective
from .objective import (
    FULL,
    Objective,
    least_squares_objective,
    linear_objective,
    quadratic_objective,
    rosenbrock_objective,
)
from .quadratic import ContractionReport, contraction_after_2n, worst_case_point

log = logging.getLogger(__name__)

SEED_ENV = "LOSSGRAD_SEED"
TRACE_HEADER = ("step", "epoch", "loss_before", "loss_after", "h", "r_h", "grad_norm")
SUMMARY_KEYS = ("final_loss", "final_h", "terminal_h_geomean", "diverged", "steps_completed", "seed")
TERMINAL_FRACTION = 0.1
DEFAULT_C_GRID = (1.001, 1.005, 1.01, 1.05, 1.1, 1.2)
DEFAULT_LR_INITS = (1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1)
OPTIMIZERS = ("lossgrad", "sgd", "wngrad")


@dataclass
class ExperimentConfig:
    objective_id: str
    objective_params: dict = field(default_factory=dict)
    optimizer_id: str = "lossgrad"
    optimizer_params: dict = field(default_factory=dict)
    batch_size: Optional[int] = None
    epochs: int = 1
    seed: int = 0
    trace_path: Optional[str] = None
    summary_path: Optional[str] = None
    loss_threshold: Optional[float] = None

    def __post_init__(self):
        if self.objective_id not in OBJECTIVES:
            raise ValidationError(f"unknown objective {self.objective_id!r}; known: {sorted(OBJECTIVES)}")
        if self.optimizer_id not in OPTIMIZERS:
            raise ValidationError(f"unknown optimizer {self.optimizer_id!r}; known: {OPTIMIZERS}")
        if self.epochs < 0:
            raise ValidationError("epochs must be non-negative")
        if self.batch_size is not None and self.batch_size <= 0:
            raise ValidationError("batch_size must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class TraceRow:
    step: int
    epoch: int
    loss_before: float
    loss_after: Optional[float]
    h: float
    r_h: Optional[float]
    grad_norm: float


@dataclass
class Summary:
    final_loss: float
    final_h: Optional[float]
    terminal_h_geomean: Optional[float]
    diverged: bool
    steps_completed: int
    seed: int
    optimizer: str = "lossgrad"
    initial_loss: Optional[float] = None
    diverged_at_step: Optional[int] = None
    steps_to_threshold: Optional[int] = None
    final_accuracy: Optional[float] = None
    trace: list = field(default_factory=list, repr=False, compare=False)
    final_params: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        skip = {"trace", "final_params"}
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name not in skip}


# --- objectives -------------------------------------------------------------


@dataclass
class Problem:
    objective: Objective
    x0: np.ndarray
    n_samples: Optional[int] = None
    accuracy: Optional[Callable[[np.ndarray], float]] = None


def _vector(p: dict, key: str, default) -> np.ndarray:
    return np.asarray(p.get(key, default), dtype=np.float64)


def _quadratic(p, seed):
    lam = p["lambdas"]
    return Problem(quadratic_objective(lam), _vector(p, "x0", np.ones(len(lam))))


def _linear(p, seed):
    a = p.get("a", [1.0, 1.0])
    return Problem(linear_objective(a), _vector(p, "x0", np.zeros(len(a))))


def _rosenbrock(p, seed):
    n = int(p.get("n", 2))
    default = np.tile([-1.2, 1.0], n // 2 + 1)[:n]
    return Problem(rosenbrock_objective(n), _vector(p, "x0", default))


def _least_squares(p, seed):
    rng = np.random.default_rng([seed, 0])
    n, dim = int(p.get("n_samples", 200)), int(p.get("dim", 5))
    design = rng.normal(size=(n, dim))
    truth = rng.normal(size=dim)
    targets = design @ truth + float(p.get("noise", 0.1)) * rng.normal(size=n)
    obj = least_squares_objective(design, targets)
    return Problem(obj, _vector(p, "x0", np.zeros(dim)), n_samples=n)


def _mlp(p, dataset: Dataset, seed):
    spec = MlpSpec(tuple(p["layer_sizes"]), tuple(p["activations"]), p.get("loss", "cross_entropy"))
    obj = mlp_objective(spec, dataset)
    x0 = init_params(spec, seed).flat
    acc = obj.accuracy if dataset.is_classification else None
    return Problem(obj, x0, n_samples=len(dataset), accuracy=acc)


def _mlp_blobs(p, seed):
    data = make_blobs(
        n=int(p.get("n", 1000)),
        centers=p.get("centers", ((-2.0, 0.0), (2.0, 0.0))),
        spread=float(p.get("spread", 0.5)),
        seed=seed,
    )
    p = {"layer_sizes": (2, 8, 2), "activations": ("relu", "identity"), **p}
    return _mlp(p, data, seed)


def _mlp_idx(p, seed):
    data = load_idx(p["images"], p.get("labels"), p.get("limit", 2000))
    return _mlp(p, data, seed)


OBJECTIVES: dict[str, Callable[[dict, int], Problem]] = {
    "quadratic": _quadratic,
    "linear": _linear,
    "rosenbrock": _rosenbrock,
    "least_squares": _least_squares,
    "mlp_blobs": _mlp_blobs,
    "mlp_idx": _mlp_idx,
}


def build_problem(config: ExperimentConfig, seed: int) -> Problem:
    return OBJECTIVES[config.objective_id](dict(config.objective_params), seed)


# --- optimizers -------------------------------------------------------------


class _LossgradRunner:
    def __init__(self, p: dict):
        self.state = LossgradState(
            h=float(p.get("h0", DEFAULT_H0)),
            c=float(p.get("c", DEFAULT_C)),
            h_min=p.get("h_min"),
            h_max=p.get("h_max"),
        )

    @property
    def h(self):
        return self.state.h

    def step(self, obj, x, batch, epoch):
        x_new, rec = lossgrad_step(self.state, obj, x, batch)
        row = (rec.loss_before, rec.loss_after if not rec.skipped else None, rec.h_used, rec.r_h,
               math.sqrt(rec.grad_norm_sq))
        return x_new, row


class _SgdRunner:
    def __init__(self, p: dict):
        self.cfg = SgdConfig(float(p.get("lr", 0.01)), ScheduleSpec.from_dict(p.get("schedule")))
        self.epoch = 0

    @property
    def h(self):
        return self.cfg.lr(self.epoch)

    def step(self, obj, x, batch, epoch):
        self.epoch = epoch
        lr = self.cfg.lr(epoch)
        x_new, loss, gsq = sgd_update(self.cfg, epoch, obj, x, batch)
        return x_new, (loss, None, lr, None, math.sqrt(gsq))


class _WngradRunner:
    def __init__(self, p: dict):
        self.state = WngradState(float(p.get("lr", 1.0)))

    @property
    def h(self):
        return self.state.step_size

    def step(self, obj, x, batch, epoch):
        lr = self.state.step_size
        x_new, loss, gsq = wngrad_update(self.state, obj, x, batch)
        return x_new, (loss, None, lr, None, math.sqrt(gsq))


RUNNERS = {"lossgrad": _LossgradRunner, "sgd": _SgdRunner, "wngrad": _WngradRunner}


# --- the run ----------------------------------------------------------------


def resolve_seed(config: ExperimentConfig) -> int:
    env = os.environ.get(SEED_ENV)
    return int(env) if env not in (None, "") else int(config.seed)


def _batches(n_samples, batch_size, rng):
    if n_samples is None or batch_size is None:
        return [FULL]
    perm = rng.permutation(n_samples)
    return [perm[i:i + batch_size] for i in range(0, n_samples, batch_size)]


def terminal_geomean(hs: Sequence[float], fraction: float = TERMINAL_FRACTION) -> Optional[float]:
    """Geometric mean of the last ``fraction`` of the step sizes (at least one)."""
    if not hs:
        return None
    k = max(1, math.ceil(fraction * len(hs)))
    tail = np.asarray(hs[-k:], dtype=np.float64)
    if np.any(tail <= 0):
        return 0.0
    return float(np.exp(np.mean(np.log(tail))))


def run_experiment(config: ExperimentConfig) -> Summary:
    """Run one training loop; write the trace CSV / summary JSON if paths are set.

    A non-finite loss or parameter vector ends the run early with
    ``diverged=True``; the parameters from before the failing step are kept.
    """
    seed = resolve_seed(config)
    problem = build_problem(config, seed)
    obj, x = problem.objective, problem.x0.copy()
    if problem.n_samples is not None and config.batch_size is not None and config.batch_size > problem.n_samples:
        raise ValidationError(f"batch_size {config.batch_size} exceeds dataset size {problem.n_samples}")
    runner = RUNNERS[config.optimizer_id](dict(config.optimizer_params))
    shuffle_rng = np.random.default_rng([seed, 1])

    initial_loss = obj.eval(x)
    rows: list[TraceRow] = []
    diverged_at = None
    reached = None
    step = 0
    for epoch in range(config.epochs):
        for batch in _batches(problem.n_samples, config.batch_size, shuffle_rng):
            try:
                x_new, (lb, la, h, r_h, gnorm) = runner.step(obj, x, batch, epoch)
            except NumericError as err:
                rec = err.record
                if rec is not None:
                    rows.append(TraceRow(step, epoch, rec.loss_before, rec.loss_after, rec.h_used, None,
                                         math.sqrt(rec.grad_norm_sq)))
                diverged_at = step
                break
            rows.append(TraceRow(step, epoch, lb, la, h, r_h, gnorm))
            if reached is None and config.loss_threshold is not None and lb <= config.loss_threshold:
                reached = step
            if not np.all(np.isfinite(x_new)):
                diverged_at = step
                break
            x = x_new
            step += 1
        if diverged_at is not None:
            log.info("run diverged at step %d", diverged_at)
            break

    final_loss = obj.eval(x)
    if not math.isfinite(final_loss) and diverged_at is None:
        diverged_at = step
    summary = Summary(
        final_loss=final_loss if math.isfinite(final_loss) else None,
        final_h=runner.h,
        terminal_h_geomean=terminal_geomean([r.h for r in rows]),
        diverged=diverged_at is not None,
        steps_completed=step,
        seed=seed,
        optimizer=config.optimizer_id,
        initial_loss=initial_loss,
        diverged_at_step=diverged_at,
        steps_to_threshold=reached,
        final_accuracy=problem.accuracy(x) if problem.accuracy else None,
        trace=rows,
        final_params=x,
    )
    if config.trace_path:
        write_csv(rows, config.trace_path)
    if config.summary_path:
        write_summary(summary, config.summary_path)
    return summary


# --- serialization ----------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def format_csv(rows: Sequence[TraceRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for r in rows:
        w.writerow([_fmt(getattr(r, k)) for k in TRACE_HEADER])
    return buf.getvalue()


def write_csv(rows: Sequence[TraceRow], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(format_csv(rows))


def parse_csv(text: str) -> list[TraceRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != TRACE_HEADER:
        raise ValidationError(f"unexpected trace header {header}")
    out = []
    for rec in reader:
        vals = dict(zip(TRACE_HEADER, rec))
        out.append(TraceRow(
            step=int(vals["step"]),
            epoch=int(vals["epoch"]),
            **{k: (float(vals[k]) if vals[k] != "" else None) for k in TRACE_HEADER[2:]},
        ))
    return out


def read_csv(path) -> list[TraceRow]:
    return parse_csv(Path(path).read_text())


def write_summary(summary: Summary, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        json.dump(summary.to_dict(), f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")


# --- sweeps -----------------------------------------------------------------


@dataclass
class SweepResult:
    parameter: str
    values: list
    summaries: list

    @property
    def max_pairwise_ratio(self) -> Optional[float]:
        """Largest ratio between any two terminal geometric-mean step sizes."""
        hs = [s.terminal_h_geomean for s in self.summaries if s.terminal_h_geomean]
        if not hs:
            return None
        return max(hs) / min(hs)

    def to_dict(self) -> dict:
        return {
            "parameter": self.parameter,
            "max_pairwise_ratio": self.max_pairwise_ratio,
            "runs": [{self.parameter: v, **s.to_dict()} for v, s in zip(self.values, self.summaries)],
        }


def _suffixed(path: Optional[str], tag: str) -> Optional[str]:
    if not path:
        return path
    p = Path(path)
    return str(p.with_name(f"{p.stem}_{tag}{p.suffix}"))


def _sweep(base: ExperimentConfig, key: str, values: Sequence[float], max_workers: int) -> SweepResult:
    if not values:
        raise ValidationError(f"{key} sweep needs at least one value")
    configs = []
    for v in values:
        tag = f"{key}-{v:g}"
        configs.append(base.replace(
            optimizer_params={**base.optimizer_params, key: v},
            trace_path=_suffixed(base.trace_path, tag),
            summary_path=_suffixed(base.summary_path, tag),
        ))
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers) as pool:
            summaries = list(pool.map(run_experiment, configs))
    else:
        summaries = [run_experiment(c) for c in configs]
    return SweepResult(key, list(values), summaries)


def sweep_initial_lr(base: ExperimentConfig, inits: Sequence[float] = DEFAULT_LR_INITS, max_workers: int = 1) -> SweepResult:
    """One LOSSGRAD run per initial step size, everything else fixed."""
    return _sweep(base, "h0", inits, max_workers)


def sweep_c(base: ExperimentConfig, cs: Sequence[float] = DEFAULT_C_GRID, max_workers: int = 1) -> SweepResult:
    """One LOSSGRAD run per adjustment factor, everything else fixed."""
    return _sweep(base, "c", cs, max_workers)


# --- quadratic demo ---------------------------------------------------------


def quad_demo(lambda1: float, lambda2: float, x0, n: int) -> tuple[ContractionReport, list[dict[str, Any]]]:
    """Measured vs bounded shrinkage after 2k exact line-search steps, k = 1..n."""
    rows = []
    report = None
    for k in range(1, n + 1):
        report = contraction_after_2n(lambda1, lambda2, x0, k)
        rows.append({
            "k": k,
            "measured_ratio": report.measured_ratio,
            "bound_ratio": report.bound_ratio,
            "holds": report.holds,
        })
    if report is None:
        raise ValidationError("n must be at least 1")
    return report, rows


def quad_demo_worst_case(lambda1: float, lambda2: float, n: int):
    return quad_demo(lambda1, lambda2, worst_case_point(lambda1, lambda2), n)
