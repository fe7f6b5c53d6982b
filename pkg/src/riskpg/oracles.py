"""Independent numerical oracles and Monte Carlo measurement harnesses.

Nothing here reuses the root finder in :mod:`riskpg.risk`; the brute-force
OCE works on a grid so that agreement with the root-based value is a real
check rather than a tautology.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, stats

from . import gradients as G
from . import mdp as M
from . import policy as pol
from . import risk as R
from .errors import ArgumentError, OracleError

DEFAULT_REPLICATIONS = 2000
DEFAULT_M_LIST = (100, 1000, 10000)


def finite_difference_gradient(f: Callable[[np.ndarray], float], theta, step: float = 1e-5) -> np.ndarray:
    """Central differences; the step on coordinate i is ``step * max(1, |theta_i|)``."""
    theta = np.asarray(theta, dtype=float)
    if not step > 0:
        raise ArgumentError(f"step must be positive, got {step}")
    grad = np.empty_like(theta)
    for i in range(theta.size):
        h = step * max(1.0, abs(theta[i]))
        e = np.zeros_like(theta)
        e[i] = h
        up, down = f(theta + e), f(theta - e)
        if not (np.isfinite(up) and np.isfinite(down)):
            raise OracleError(f"objective is not finite around coordinate {i}")
        grad[i] = (up - down) / (2 * h)
    return grad


def brute_force_oce(dist: R.DiscreteDist, loss, grid: Tuple[float, float, int]) -> Tuple[float, float]:
    """Minimise ``k + E[l(X - k)]`` over an evenly spaced grid of ``k``.

    Returns ``(min value, argmin)``; an argmin on the boundary means the grid
    is too narrow.
    """
    lo, hi, n = grid
    n = int(n)
    if not hi > lo or n < 3:
        raise ArgumentError("grid needs lo < hi and at least 3 points")
    ks = np.linspace(lo, hi, n)
    best_val, best_k = math.inf, None
    # chunked to bound memory on fine grids
    for start in range(0, n, 4096):
        k = ks[start:start + 4096]
        vals = k + loss.eval(dist.values[None, :] - k[:, None]) @ dist.probs
        j = int(np.argmin(vals))
        if vals[j] < best_val:
            best_val, best_k = float(vals[j]), float(k[j])
    if best_k in (ks[0], ks[-1]):
        raise OracleError(f"grid argmin {best_k} sits on the boundary of [{lo}, {hi}]; widen the grid")
    return best_val, best_k


def normal_expectile(nu: float, mu: float = 0.0, sigma: float = 1.0) -> float:
    """Population expectile of ``N(mu, sigma^2)`` from the Gaussian partial moments."""
    if not 0 < nu < 1:
        raise ArgumentError(f"nu must lie in (0, 1), got {nu}")

    def ident(k):
        upper = stats.norm.pdf(k) - k * stats.norm.sf(k)  # E[(Z - k)+]
        lower = stats.norm.pdf(k) + k * stats.norm.cdf(k)  # E[(k - Z)+]
        return nu * upper - (1 - nu) * lower

    return mu + sigma * optimize.brentq(ident, -10.0, 10.0, xtol=1e-14)


# -- Monte Carlo harnesses ---------------------------------------------------

@dataclass
class MseCurve:
    target: str
    points: List[Tuple[int, float, int]] = field(default_factory=list)
    slope: Optional[float] = None
    # per point: standard error of the MSE estimate
    stderr: List[float] = field(default_factory=list)

    @property
    def flat_zero(self) -> bool:
        return all(p[1] == 0 for p in self.points)

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "points": [{"m": m, "mse": mse, "replications": r, "stderr": se}
                       for (m, mse, r), se in zip(self.points, self.stderr)],
            "slope": self.slope,
            "flat_zero": self.flat_zero,
        }


def fit_loglog_slope(ms: Sequence[float], mses: Sequence[float]) -> Optional[float]:
    """Least-squares slope of log(mse) on log(m); None when any mse is zero."""
    ms = np.asarray(ms, dtype=float)
    mses = np.asarray(mses, dtype=float)
    if np.any(mses <= 0):
        return None
    slope, _ = np.polyfit(np.log(ms), np.log(mses), 1)
    return float(slope)


def mse_curve(estimator: Callable[[int, int, np.random.Generator], np.ndarray], truth,
              m_list: Sequence[int] = DEFAULT_M_LIST, replications: int = DEFAULT_REPLICATIONS,
              rng: Optional[np.random.Generator] = None, target: str = "estimator") -> MseCurve:
    """Empirical MSE of ``estimator`` against an exact ``truth`` for each m.

    ``estimator(m, r, rng)`` returns ``r`` independent estimates as an array
    of shape ``(r,)`` or ``(r, d)``.
    """
    m_list = [int(m) for m in m_list]
    if any(b <= a for a, b in zip(m_list, m_list[1:])):
        raise ArgumentError("m_list must be strictly increasing")
    if replications < 100:
        raise ArgumentError("at least 100 replications are required")
    rng = rng if rng is not None else np.random.default_rng(0)
    truth = np.asarray(truth, dtype=float)
    curve = MseCurve(target)
    for m in m_list:
        est = np.asarray(estimator(m, replications, rng), dtype=float).reshape(replications, -1)
        sq = ((est - truth.reshape(1, -1)) ** 2).sum(axis=1)
        curve.points.append((m, float(sq.mean()), replications))
        curve.stderr.append(float(sq.std(ddof=1) / math.sqrt(replications)))
    curve.slope = fit_loglog_slope([p[0] for p in curve.points], [p[1] for p in curve.points])
    return curve


def tail_frequency(estimator: Callable[[int, int, np.random.Generator], np.ndarray], truth: float,
                   m: int, epsilon_list: Sequence[float], replications: int,
                   rng: Optional[np.random.Generator] = None) -> List[Tuple[float, float]]:
    """Fraction of replications with ``|estimate - truth| >= eps`` for each eps."""
    rng = rng if rng is not None else np.random.default_rng(0)
    est = np.asarray(estimator(int(m), int(replications), rng), dtype=float).ravel()
    dev = np.abs(est - truth)
    return [(float(eps), float(np.mean(dev >= eps))) for eps in epsilon_list]


# -- estimator closures for the harness --------------------------------------

def _sample_arrays(spec: M.MdpSpec, probs: np.ndarray, step_scores: np.ndarray,
                   r: int, m: int, rng: np.random.Generator, k: int = 1):
    """Costs ``(r, k, m)`` and scores ``(r, k, m, d)``; replication rows are contiguous."""
    u = 1.0 - rng.random((r * k * m, spec.horizon, 4))
    batch = M.simulate(spec, probs, u)
    costs = batch.discounted_costs(spec.gamma).reshape(r, k, m)
    scores = step_scores[batch.states, batch.actions].sum(axis=1).reshape(r, k, m, -1)
    return costs, scores


def gradient_replications(spec: M.MdpSpec, policy: pol.PolicySpec, theta, risk: R.RiskSpec,
                          m: int, replications: int, rng: np.random.Generator,
                          tol: float = R.DEFAULT_TOL, pairing: str = "hat",
                          max_chunk_trajectories: int = 2_000_000) -> np.ndarray:
    """``replications`` independent gradient estimates at batch size ``m``.

    Each replication consumes ``m`` (or ``2m`` when double-sampled, first
    half ``z``, second half the hat batch) consecutive trajectories of the
    stream, so the result does not depend on the chunk size.
    """
    probs = pol.action_prob_table(policy, theta)
    table = pol.step_score_table(policy, theta)
    k = 2 if risk.double_sampled else 1
    chunk = max(1, min(replications, max_chunk_trajectories // (k * m)))
    out = []
    done = 0
    while done < replications:
        r = min(chunk, replications - done)
        c, g = _sample_arrays(spec, probs, table, r, m, rng, k)
        if k == 2:
            grad, _, _ = G.grad_from_arrays(risk, c[:, 0], None, c[:, 1], g[:, 1], tol, pairing)
        else:
            grad, _, _ = G.grad_from_arrays(risk, c[:, 0], g[:, 0], tol=tol)
        out.append(grad)
        done += r
    return np.concatenate(out, axis=0)


def gradient_estimator(spec, policy, theta, risk, tol=R.DEFAULT_TOL, pairing="hat"):
    """Closure ``(m, r, rng) -> (r, d)`` for :func:`mse_curve`."""
    def est(m, r, rng):
        return gradient_replications(spec, policy, theta, risk, m, r, rng, tol, pairing)
    return est


def sample_estimator(sampler: Callable[[np.random.Generator, tuple], np.ndarray],
                     statistic: Callable[[np.ndarray], np.ndarray],
                     max_chunk_values: int = 2_000_000):
    """Closure applying a row-wise ``statistic`` to ``(r, m)`` blocks from ``sampler``."""
    def est(m, r, rng):
        chunk = max(1, min(r, max_chunk_values // m))
        out, done = [], 0
        while done < r:
            k = min(chunk, r - done)
            out.append(np.atleast_1d(statistic(sampler(rng, (k, m)))))
            done += k
        return np.concatenate(out)
    return est


def markov_return_sampler(spec: M.MdpSpec, policy: pol.PolicySpec, theta):
    """Sampler of discounted returns of the Markov cost process induced by ``pi_theta``."""
    probs = pol.action_prob_table(policy, theta)

    def sampler(rng, shape):
        r, m = shape
        u = 1.0 - rng.random((r * m, spec.horizon, 4))
        return M.simulate(spec, probs, u).discounted_costs(spec.gamma).reshape(r, m)
    return sampler


def replication_mean_ci(samples: np.ndarray, z: float = 4.0):
    """Per-coordinate mean and ``z``-sigma half width of the Monte Carlo mean."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    half = z * samples.std(axis=0, ddof=1) / math.sqrt(n)
    return mean, half
