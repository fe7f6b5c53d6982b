"""Policy-gradient estimators for expectile, UBSR and OCE objectives.

Sample estimators come in two layers. The ``*_from_arrays`` functions work on
discounted costs of shape ``(R, m)`` and scores of shape ``(R, m, d)`` so that
``R`` independent replications are solved in one call; the public
batch-level functions wrap them for a single batch of trajectories.

Double-sampled estimators (general UBSR, OCE) take two independent batches.
The risk root and, for UBSR, the denominator come from ``batch``; each
numerator term pairs the loss weight and score of the *same* trajectory of
``hat_batch``. Pairing the weight of ``batch[j]`` with the score of
``hat_batch[j]`` (``pairing="cross"``) multiplies two independent factors, one
of which has mean zero, so that variant is kept only to document why it is
not the default.

The exact gradients evaluate the population formulas by summing over every
trajectory of an enumerable MDP.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import losses as L
from . import mdp as M
from . import policy as pol
from . import risk as R
from .errors import ArgumentError, RangeError

PAIRINGS = ("hat", "cross")


@dataclass(frozen=True, eq=False)
class GradEstimate:
    gradient: np.ndarray
    risk_estimate: float
    batch_size: int
    denominator_value: float
    used_double_sampling: bool

    @property
    def diagnostics(self) -> dict:
        return {
            "denominator_value": self.denominator_value,
            "used_double_sampling": self.used_double_sampling,
        }


# -- array layer ---------------------------------------------------------

def _rows(costs, scores):
    c = np.asarray(costs, dtype=float)
    g = np.asarray(scores, dtype=float)
    if c.ndim == 1:
        c, g = c[None, :], g[None, :, :]
    if c.shape[-1] == 0:
        raise ArgumentError("empty batch")
    if g.shape[:2] != c.shape:
        raise ArgumentError(f"scores {g.shape} do not match costs {c.shape}")
    return c, g


def expectile_grad_from_arrays(costs, scores, nu: float, tol: float = R.DEFAULT_TOL):
    """Returns ``(gradient (R, d), expectile (R,), denominator (R,))``."""
    c, g = _rows(costs, scores)
    xi = np.atleast_1d(R.empirical_expectile(c, nu, tol))
    x = c - xi[:, None]
    w = np.where(x > 0, nu, 1.0 - nu)
    num = np.einsum("rm,rmd->rd", w * x, g)
    den = w.sum(axis=1)
    return num / den[:, None], xi, den


def ubsr_grad_from_arrays(costs, hat_costs, hat_scores, loss: L.LossFn, lam: float,
                          tol: float = R.DEFAULT_TOL, pairing: str = "hat"):
    """Double-sampled UBSR gradient: root and denominator from ``costs``."""
    if pairing not in PAIRINGS:
        raise ArgumentError(f"pairing must be one of {PAIRINGS}")
    hc, hg = _rows(hat_costs, hat_scores)
    c = np.atleast_2d(np.asarray(costs, dtype=float))
    if c.shape != hc.shape:
        raise ArgumentError(f"batch sizes differ: {c.shape} vs {hc.shape}")
    sr = np.atleast_1d(R.empirical_ubsr(c, loss, lam, tol))
    weight_src = hc if pairing == "hat" else c
    num = np.einsum("rm,rmd->rd", loss.eval(weight_src - sr[:, None]), hg)
    den = loss.deriv(c - sr[:, None]).sum(axis=1)
    if np.any(den <= 0):
        raise ArgumentError("UBSR denominator is not positive; loss slope vanished on the batch")
    return num / den[:, None], sr, den


def entropic_grad_from_arrays(costs, scores, beta: float):
    """Single-batch entropic gradient ``beta^-1 mean(exp(beta (c - SR)) g)``."""
    c, g = _rows(costs, scores)
    if not beta > 0:
        raise ArgumentError(f"beta must be positive, got {beta}")
    z = beta * c
    zmax = z.max(axis=1, keepdims=True)
    lme = zmax[:, 0] + np.log(np.exp(z - zmax).mean(axis=1))
    sr = lme / beta
    expo = z - lme[:, None]
    if np.any(expo > L.EXP_CAP) or not np.all(np.isfinite(expo)):
        raise RangeError("entropic weights overflow")
    w = np.exp(expo)
    grad = np.einsum("rm,rmd->rd", w, g) / (beta * c.shape[1])
    return grad, sr, np.full(c.shape[0], float(c.shape[1]))


def oce_grad_from_arrays(costs, hat_costs, hat_scores, loss: L.LossFn,
                         tol: float = R.DEFAULT_TOL, pairing: str = "hat"):
    """Double-sampled OCE gradient; no denominator."""
    if pairing not in PAIRINGS:
        raise ArgumentError(f"pairing must be one of {PAIRINGS}")
    hc, hg = _rows(hat_costs, hat_scores)
    c = np.atleast_2d(np.asarray(costs, dtype=float))
    if c.shape != hc.shape:
        raise ArgumentError(f"batch sizes differ: {c.shape} vs {hc.shape}")
    R._check_oce_loss(loss)
    oce, kstar = R._oce_from_root(c, loss, None, tol)
    weight_src = hc if pairing == "hat" else c
    grad = np.einsum("rm,rmd->rd", loss.eval(weight_src - kstar[:, None]), hg) / c.shape[1]
    return grad, oce, np.full(c.shape[0], float(c.shape[1]))


def grad_from_arrays(risk: R.RiskSpec, costs, scores, hat_costs=None, hat_scores=None,
                     tol: float = R.DEFAULT_TOL, pairing: str = "hat"):
    """Dispatch on ``risk``; returns ``(gradient, risk_estimate, denominator)`` rows."""
    if risk.kind == R.EXPECTILE:
        return expectile_grad_from_arrays(costs, scores, risk.nu, tol)
    if risk.is_entropic:
        return entropic_grad_from_arrays(costs, scores, risk.loss.params["beta"])
    if hat_costs is None or hat_scores is None:
        raise ArgumentError(f"{risk.describe()} needs an independent hat batch")
    if risk.kind == R.UBSR:
        return ubsr_grad_from_arrays(costs, hat_costs, hat_scores, risk.loss, risk.lam, tol, pairing)
    return oce_grad_from_arrays(costs, hat_costs, hat_scores, risk.loss, tol, pairing)


# -- batch layer -------------------------------------------------------------

def _costs_scores(batch, theta, policy: pol.PolicySpec, spec: M.MdpSpec):
    b = M.as_batch(batch)
    if len(b) == 0:
        raise ArgumentError("empty batch")
    return b.discounted_costs(spec.gamma), pol.scores(policy, theta, b.states, b.actions)


def _pack(out, m, double) -> GradEstimate:
    grad, risk_est, den = out
    grad = grad[0]
    if not np.all(np.isfinite(grad)):
        raise RangeError("gradient estimate is not finite")
    return GradEstimate(grad, float(risk_est[0]), m, float(den[0]), double)


def expectile_policy_gradient(batch, nu, theta, policy, spec, tol=R.DEFAULT_TOL) -> GradEstimate:
    c, g = _costs_scores(batch, theta, policy, spec)
    return _pack(expectile_grad_from_arrays(c, g, nu, tol), len(c), False)


def ubsr_policy_gradient(batch, hat_batch, loss, lam, theta, policy, spec,
                         tol=R.DEFAULT_TOL, pairing="hat") -> GradEstimate:
    c, _ = _costs_scores(batch, theta, policy, spec)
    hc, hg = _costs_scores(hat_batch, theta, policy, spec)
    if len(c) != len(hc):
        raise ArgumentError(f"batch sizes differ: {len(c)} vs {len(hc)}")
    return _pack(ubsr_grad_from_arrays(c, hc, hg, loss, lam, tol, pairing), len(c), True)


def entropic_policy_gradient(batch, beta, theta, policy, spec, tol=R.DEFAULT_TOL) -> GradEstimate:
    c, g = _costs_scores(batch, theta, policy, spec)
    return _pack(entropic_grad_from_arrays(c, g, beta), len(c), False)


def oce_policy_gradient(batch, hat_batch, loss, theta, policy, spec,
                        tol=R.DEFAULT_TOL, pairing="hat") -> GradEstimate:
    c, _ = _costs_scores(batch, theta, policy, spec)
    hc, hg = _costs_scores(hat_batch, theta, policy, spec)
    if len(c) != len(hc):
        raise ArgumentError(f"batch sizes differ: {len(c)} vs {len(hc)}")
    return _pack(oce_grad_from_arrays(c, hc, hg, loss, tol, pairing), len(c), True)


def policy_gradient(risk: R.RiskSpec, batch, theta, policy, spec, hat_batch=None,
                    tol=R.DEFAULT_TOL) -> GradEstimate:
    """Estimator matching ``risk``; ``hat_batch`` is required when double-sampled."""
    if risk.kind == R.EXPECTILE:
        return expectile_policy_gradient(batch, risk.nu, theta, policy, spec, tol)
    if risk.is_entropic:
        return entropic_policy_gradient(batch, risk.loss.params["beta"], theta, policy, spec, tol)
    if hat_batch is None:
        raise ArgumentError(f"{risk.describe()} needs an independent hat batch")
    if risk.kind == R.UBSR:
        return ubsr_policy_gradient(batch, hat_batch, risk.loss, risk.lam, theta, policy, spec, tol)
    return oce_policy_gradient(batch, hat_batch, risk.loss, theta, policy, spec, tol)


# -- exact population formulas ---------------------------------------------

@dataclass(frozen=True, eq=False)
class ExactLaw:
    """Trajectory-level law under ``pi_theta``: probabilities, returns, scores."""

    probs: np.ndarray
    costs: np.ndarray
    scores: np.ndarray

    def dist(self) -> R.DiscreteDist:
        return R.DiscreteDist.from_weighted(self.costs, self.probs)


def exact_law(spec: M.MdpSpec, policy: pol.PolicySpec, theta,
              cap: int = M.DEFAULT_ENUMERATION_CAP) -> ExactLaw:
    M._check_pairing(spec, policy)
    enum = M.enumerate_structure(spec, cap)
    return ExactLaw(
        enum.probabilities(policy, theta),
        enum.discounted_costs(spec.gamma),
        pol.scores(policy, theta, enum.states, enum.actions),
    )


def _weighted_root(law: ExactLaw, loss, lam, tol):
    return float(R.shortfall_root(law.costs[None, :], loss, lam, law.probs, tol)[0])


def exact_risk(spec, policy, theta, risk: R.RiskSpec, tol=1e-13, cap=M.DEFAULT_ENUMERATION_CAP) -> float:
    """``h(theta)``: the risk of the discounted return under ``pi_theta``."""
    law = exact_law(spec, policy, theta, cap)
    return _risk_of_law(law, risk, tol)


def _risk_of_law(law: ExactLaw, risk: R.RiskSpec, tol: float) -> float:
    if risk.kind == R.EXPECTILE:
        return float(R._expectile_rows(law.costs[None, :], risk.nu, law.probs, tol)[0])
    if risk.kind == R.UBSR:
        return _weighted_root(law, risk.loss, risk.lam, tol)
    k = _weighted_root(law, risk.loss.derivative_loss(), 1.0, tol)
    return k + float(law.probs @ risk.loss.eval(law.costs - k))


def exact_expectile_gradient(spec, policy, theta, nu, tol=1e-13, cap=M.DEFAULT_ENUMERATION_CAP):
    law = exact_law(spec, policy, theta, cap)
    xi = float(R._expectile_rows(law.costs[None, :], nu, law.probs, tol)[0])
    x = law.costs - xi
    w = np.where(x > 0, nu, 1.0 - nu)
    return (law.probs * w * x) @ law.scores / (law.probs @ w)


def exact_ubsr_gradient(spec, policy, theta, loss, lam, tol=1e-13, cap=M.DEFAULT_ENUMERATION_CAP):
    law = exact_law(spec, policy, theta, cap)
    sr = _weighted_root(law, loss, lam, tol)
    x = law.costs - sr
    return (law.probs * loss.eval(x)) @ law.scores / (law.probs @ loss.deriv(x))


def exact_entropic_gradient(spec, policy, theta, beta, cap=M.DEFAULT_ENUMERATION_CAP):
    """Closed form for ``l = exp(beta x)``, ``lambda = 1``: no ratio needed."""
    law = exact_law(spec, policy, theta, cap)
    z = beta * law.costs
    zmax = z.max()
    sr = (zmax + np.log(law.probs @ np.exp(z - zmax))) / beta
    return (law.probs * np.exp(beta * (law.costs - sr))) @ law.scores / beta


def exact_oce_gradient(spec, policy, theta, loss, tol=1e-13, cap=M.DEFAULT_ENUMERATION_CAP):
    law = exact_law(spec, policy, theta, cap)
    k = _weighted_root(law, loss.derivative_loss(), 1.0, tol)
    return (law.probs * loss.eval(law.costs - k)) @ law.scores


def exact_mean_gradient(spec, policy, theta, cap=M.DEFAULT_ENUMERATION_CAP):
    """Risk-neutral gradient ``E[c(tau) g(theta, tau)]``."""
    law = exact_law(spec, policy, theta, cap)
    return (law.probs * law.costs) @ law.scores


def exact_gradient(spec, policy, theta, risk: R.RiskSpec, tol=1e-13, cap=M.DEFAULT_ENUMERATION_CAP):
    if risk.kind == R.EXPECTILE:
        return exact_expectile_gradient(spec, policy, theta, risk.nu, tol, cap)
    if risk.kind == R.UBSR:
        return exact_ubsr_gradient(spec, policy, theta, risk.loss, risk.lam, tol, cap)
    return exact_oce_gradient(spec, policy, theta, risk.loss, tol, cap)
