"""Risk-aware policy gradient: stochastic descent on a trajectory-level risk.

Each iteration samples ``m_i`` trajectories (``2 m_i`` when the risk's
estimator is double-sampled), forms a gradient estimate and takes a step
``theta <- theta - eta_i * grad``. The returned iterate is ``theta_R`` with
``R`` uniform on ``1..N``; ``iterates[0]`` is the starting point and
``iterates[i]`` the point after ``i`` updates.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import gradients as G
from . import mdp as M
from . import policy as pol
from . import risk as R
from .errors import ArgumentError, ConfigurationError, EstimatorError, RiskPGError

log = logging.getLogger(__name__)

THETA_WARN = 50.0

Schedule = Union[float, int, Callable[[int], float], None]


@dataclass(frozen=True)
class RapgConfig:
    num_iterations: int
    risk: R.RiskSpec
    seed: int
    step_size: Schedule = None
    batch_size: Schedule = None
    projection_box: Optional[Tuple[float, float]] = None
    tol: float = R.DEFAULT_TOL

    def __post_init__(self):
        if int(self.num_iterations) != self.num_iterations or self.num_iterations < 1:
            raise ConfigurationError(f"num_iterations must be a positive integer, got {self.num_iterations}")
        if self.projection_box is not None:
            lo, hi = self.projection_box
            if not lo < hi:
                raise ConfigurationError(f"projection box needs lo < hi, got {self.projection_box}")
        if isinstance(self.step_size, (int, float)) and not self.step_size > 0:
            raise ConfigurationError("step size must be positive")
        if isinstance(self.batch_size, (int, float)) and (
                self.batch_size < 1 or int(self.batch_size) != self.batch_size):
            raise ConfigurationError("batch size must be a positive integer")

    def eta(self, i: int) -> float:
        if self.step_size is None:
            return 1.0 / math.sqrt(self.num_iterations)
        eta = self.step_size(i) if callable(self.step_size) else self.step_size
        if not eta > 0:
            raise ConfigurationError(f"step size at iteration {i} is {eta}")
        return float(eta)

    def m(self, i: int) -> int:
        if self.batch_size is None:
            return math.ceil(math.sqrt(self.num_iterations))
        m = self.batch_size(i) if callable(self.batch_size) else self.batch_size
        if int(m) != m or m < 1:
            raise ConfigurationError(f"batch size at iteration {i} is {m}")
        return int(m)

    def echo(self) -> dict:
        def sched(v, default):
            if v is None:
                return default
            return v if isinstance(v, (int, float)) else getattr(v, "__name__", "callable")
        return {
            "num_iterations": self.num_iterations,
            "risk": self.risk.describe(),
            "seed": self.seed,
            "step_size": sched(self.step_size, "1/sqrt(N)"),
            "batch_size": sched(self.batch_size, "ceil(sqrt(N))"),
            "projection_box": list(self.projection_box) if self.projection_box else None,
            "tol": self.tol,
        }


@dataclass
class RunRecord:
    iterates: List[np.ndarray]
    grad_norm_sq: List[float]
    risk_estimates: List[float]
    selected_index: Optional[int]
    config: dict
    seed: int
    wall_time: float = 0.0
    total_trajectories: int = 0
    status: str = "complete"
    message: str = ""

    @property
    def selected(self) -> np.ndarray:
        return self.iterates[self.selected_index]

    def to_dict(self) -> dict:
        return {
            "iterates": [t.tolist() for t in self.iterates],
            "grad_norm_sq": list(self.grad_norm_sq),
            "risk_estimates": list(self.risk_estimates),
            "selected_index": self.selected_index,
            "selected_theta": self.selected.tolist() if self.selected_index is not None else None,
            "config": self.config,
            "seed": self.seed,
            "total_trajectories": self.total_trajectories,
            "status": self.status,
            "message": self.message,
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            [np.asarray(t, dtype=float) for t in d["iterates"]],
            list(d["grad_norm_sq"]), list(d["risk_estimates"]), d["selected_index"],
            d["config"], d["seed"], d.get("wall_time", 0.0), d.get("total_trajectories", 0),
            d.get("status", "complete"), d.get("message", ""),
        )


class RunAborted(EstimatorError):
    def __init__(self, message, iteration, record):
        super().__init__(message, iteration)
        self.record = record


# estimator(theta, m, rng) -> GradEstimate or gradient vector
Estimator = Callable[[np.ndarray, int, np.random.Generator], object]


def sampling_estimator(spec: M.MdpSpec, policy: pol.PolicySpec, risk: R.RiskSpec,
                       tol: float = R.DEFAULT_TOL) -> Estimator:
    """Default estimator: sample ``m`` (or ``2m``) trajectories and apply the risk's estimator."""
    def est(theta, m, rng):
        if risk.double_sampled:
            both = M.sample_batch(spec, policy, theta, 2 * m, rng)
            return G.policy_gradient(risk, both[:m], theta, policy, spec, hat_batch=both[m:], tol=tol)
        batch = M.sample_batch(spec, policy, theta, m, rng)
        return G.policy_gradient(risk, batch, theta, policy, spec, tol=tol)
    est.trajectories_per_sample = 2 if risk.double_sampled else 1
    return est


def exact_estimator(spec: M.MdpSpec, policy: pol.PolicySpec, risk: R.RiskSpec) -> Estimator:
    """Noise-free estimator returning the exact gradient (enumerable MDPs only)."""
    def est(theta, m, rng):
        return G.exact_gradient(spec, policy, theta, risk)
    est.trajectories_per_sample = 0
    return est


def run_rapg(spec: M.MdpSpec, policy: pol.PolicySpec, theta0, config: RapgConfig,
             rng: Optional[np.random.Generator] = None,
             estimator: Optional[Estimator] = None) -> RunRecord:
    start = time.perf_counter()
    theta = pol.check_params(policy, theta0).copy()
    M._check_pairing(spec, policy)
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    if estimator is None:
        estimator = sampling_estimator(spec, policy, config.risk, config.tol)
    per_sample = getattr(estimator, "trajectories_per_sample", 1)
    box = config.projection_box
    if box is not None:
        theta = np.clip(theta, *box)
    record = RunRecord([theta.copy()], [], [], None, config.echo(), config.seed)
    warned = False
    N = config.num_iterations
    for i in range(1, N + 1):
        m = config.m(i)
        try:
            out = estimator(theta, m, rng)
        except RiskPGError as exc:
            raise EstimatorError(f"iteration {i}: {exc}", iteration=i) from exc
        if isinstance(out, G.GradEstimate):
            grad, risk_est = out.gradient, out.risk_estimate
        else:
            grad, risk_est = np.asarray(out, dtype=float), float("nan")
        record.total_trajectories += per_sample * m
        if grad.shape != theta.shape or not np.all(np.isfinite(grad)):
            record.status = "aborted"
            record.message = f"non-finite or misshapen gradient at iteration {i}"
            record.wall_time = time.perf_counter() - start
            raise RunAborted(record.message, i, record)
        theta = theta - config.eta(i) * grad
        if box is not None:
            theta = np.clip(theta, *box)
        elif not warned and np.max(np.abs(theta)) > THETA_WARN:
            log.warning("iteration %d: |theta|_inf = %.1f exceeds %.0f with no projection box",
                        i, np.max(np.abs(theta)), THETA_WARN)
            warned = True
        record.iterates.append(theta.copy())
        record.grad_norm_sq.append(float(grad @ grad))
        record.risk_estimates.append(risk_est)
    record.selected_index = int(rng.integers(1, N + 1))
    record.wall_time = time.perf_counter() - start
    return record


def select_uniform_iterate(record: RunRecord, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """``theta_R`` for the recorded ``R``, or for a fresh uniform draw when ``rng`` is given."""
    if record.selected_index is None:
        raise ArgumentError("run record is incomplete")
    if rng is None:
        return record.iterates[record.selected_index]
    n = len(record.iterates) - 1
    return record.iterates[int(rng.integers(1, n + 1))]


@dataclass
class StationarityPoint:
    num_iterations: int
    grad_norm_sq: List[float]
    mean: float
    ci_halfwidth: float
    # per-seed mean of |grad h|^2 over iterates 1..N, i.e. E[|grad h(theta_R)|^2 | run]
    iterate_average: Optional[List[float]] = None
    iterate_average_mean: Optional[float] = None
    iterate_average_ci_halfwidth: Optional[float] = None


def _ratio(first: float, last: float) -> float:
    return first / last if last > 0 else math.inf


def _loglog_slope(n_grid, means) -> Optional[float]:
    if len(means) > 1 and all(v > 0 for v in means):
        return float(np.polyfit(np.log(list(n_grid)), np.log(means), 1)[0])
    return None


def _mean_ci(vals) -> Tuple[float, float]:
    arr = np.asarray(vals)
    half = 1.96 * arr.std(ddof=1) / math.sqrt(len(arr)) if len(arr) > 1 else 0.0
    return float(arr.mean()), float(half)


@dataclass
class StationarityReport:
    risk: str
    points: List[StationarityPoint] = field(default_factory=list)
    slope: Optional[float] = None
    iterate_average_slope: Optional[float] = None

    @property
    def decay_factor(self) -> float:
        """Ratio of the mean at the smallest N to the mean at the largest N."""
        return _ratio(self.points[0].mean, self.points[-1].mean)

    @property
    def iterate_average_decay_factor(self) -> Optional[float]:
        """Same ratio for the iterate-averaged values, when they were computed."""
        first, last = self.points[0].iterate_average_mean, self.points[-1].iterate_average_mean
        return None if first is None else _ratio(first, last)

    def to_dict(self) -> dict:
        return {
            "risk": self.risk,
            "points": [asdict(p) for p in self.points],
            "slope": self.slope,
            "decay_factor": self.decay_factor,
            "iterate_average_slope": self.iterate_average_slope,
            "iterate_average_decay_factor": self.iterate_average_decay_factor,
        }


def stationarity_report(spec: M.MdpSpec, policy: pol.PolicySpec, config: RapgConfig,
                        num_seeds: int, n_grid: Sequence[int] = (100, 400, 1600),
                        theta0=None, estimator: Optional[Estimator] = None,
                        over_iterates: bool = False) -> StationarityReport:
    """Mean exact ``|grad h(theta_R)|^2`` over seeds, for each N in ``n_grid``.

    Seeds are ``config.seed + s`` for ``s < num_seeds``. Schedules in
    ``config`` are kept, so leave them unset to get the default ``1/sqrt(N)``
    and ``ceil(sqrt(N))`` at every N.

    With ``over_iterates`` each run also contributes the average of the exact
    ``|grad h|^2`` over iterates ``1..N``. That is the expectation over ``R``
    given the run: same target, without the variance of a single draw of
    ``R``, at the cost of ``N`` exact gradients per run.
    """
    if num_seeds < 1:
        raise ArgumentError("num_seeds must be positive")
    theta0 = np.zeros(policy.dims) if theta0 is None else theta0
    report = StationarityReport(config.risk.describe())
    for n in n_grid:
        vals, averaged = [], []
        for s in range(num_seeds):
            cfg = replace(config, num_iterations=int(n), seed=config.seed + s)
            rec = run_rapg(spec, policy, theta0, cfg, estimator=estimator)
            g = G.exact_gradient(spec, policy, rec.selected, config.risk)
            vals.append(float(g @ g))
            if over_iterates:
                norms = [G.exact_gradient(spec, policy, t, config.risk) for t in rec.iterates[1:]]
                averaged.append(float(np.mean([v @ v for v in norms])))
        point = StationarityPoint(int(n), vals, *_mean_ci(vals))
        if over_iterates:
            point.iterate_average = averaged
            point.iterate_average_mean, point.iterate_average_ci_halfwidth = _mean_ci(averaged)
        report.points.append(point)
    report.slope = _loglog_slope(n_grid, [p.mean for p in report.points])
    if over_iterates:
        report.iterate_average_slope = _loglog_slope(
            n_grid, [p.iterate_average_mean for p in report.points])
    return report
