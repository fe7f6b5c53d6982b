"""Expectile, UBSR and OCE risk values by one-dimensional root finding.

Every risk here is the left end of the set ``{k : E[l(X - k)] <= lam}`` for a
nondecreasing loss ``l``; the map ``k -> E[l(X - k)]`` is nonincreasing, so a
sign-based bisection works even when ``l`` has jumps in its derivative (or in
itself, as for the CVaR derivative used by OCE).

Empirical estimators accept either a 1-D sample or a 2-D array whose rows
are independent samples; rows are solved simultaneously.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from . import losses as L
from .errors import ArgumentError, InfeasibleThresholdError

DEFAULT_TOL = 1e-10
MAX_BISECTIONS = 200
MAX_EXPANSIONS = 64


@dataclass(frozen=True, eq=False)
class DiscreteDist:
    """Finite-support law: ``values[i]`` with probability ``probs[i]``."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        p = np.array(self.probs, dtype=float).ravel()
        if v.shape != p.shape or v.size == 0:
            raise ArgumentError("distribution needs matching, nonempty values and probabilities")
        if not np.all(np.isfinite(v)):
            raise ArgumentError("distribution has non-finite atoms")
        if np.any(p <= 0) or np.any(p > 1):
            raise ArgumentError("atom probabilities must lie in (0, 1]")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ArgumentError(f"atom probabilities sum to {p.sum()}, not 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_atoms(cls, atoms: Sequence[Tuple[float, float]]) -> "DiscreteDist":
        atoms = list(atoms)
        return cls([v for v, _ in atoms], [p for _, p in atoms])

    @classmethod
    def from_weighted(cls, values, probs) -> "DiscreteDist":
        """Merge duplicate values and drop zero-probability atoms."""
        values = np.asarray(values, dtype=float)
        probs = np.asarray(probs, dtype=float)
        keep = probs > 0
        uniq, inv = np.unique(values[keep], return_inverse=True)
        merged = np.bincount(inv, weights=probs[keep])
        return cls(uniq, merged / merged.sum())

    @property
    def atoms(self):
        return list(zip(self.values.tolist(), self.probs.tolist()))

    def mean(self) -> float:
        return float(self.values @ self.probs)

    def variance(self) -> float:
        mu = self.mean()
        return float(((self.values - mu) ** 2) @ self.probs)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.choice(self.values, size=size, p=self.probs)


def _as_rows(samples) -> Tuple[np.ndarray, bool]:
    x = np.asarray(samples, dtype=float)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ArgumentError("samples must be nonempty")
    if x.ndim > 2:
        raise ArgumentError("samples must be 1-D or 2-D (rows of samples)")
    if not np.all(np.isfinite(x)):
        raise ArgumentError("samples contain non-finite values")
    return np.atleast_2d(x), x.ndim == 1


def _weighted_mean(values: np.ndarray, weights: Optional[np.ndarray]) -> np.ndarray:
    if weights is None:
        return values.mean(axis=-1)
    return values @ weights


def _bisect(values: np.ndarray, loss: L.LossFn, lam: float, weights: Optional[np.ndarray],
            tol: float, segment_stop: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """Final bracket ``(lo, hi)`` per row: ``lo`` infeasible, ``hi`` feasible.

    With ``segment_stop`` a row also closes once no sample lies strictly
    inside its bracket (the residual is then affine on it for piecewise
    linear losses).
    """
    if not tol > 0:
        raise ArgumentError(f"tolerance must be positive, got {tol}")
    n = values.shape[1]

    def feasible(k):
        lv = loss.eval(values - k[:, None])
        mean = lv.sum(axis=1) / n if weights is None else lv @ weights
        return mean <= lam

    lo = values.min(axis=1) - 1.0
    hi = values.max(axis=1) + 1.0
    step = hi - lo
    for _ in range(MAX_EXPANSIONS):
        bad = feasible(lo)
        if not bad.any():
            break
        lo = np.where(bad, lo - step, lo)
        step = np.where(bad, 2 * step, step)
    else:
        raise InfeasibleThresholdError(
            f"threshold {lam} is above the loss mean everywhere searched; risk is unbounded below"
        )
    step = hi - lo
    for _ in range(MAX_EXPANSIONS):
        bad = ~feasible(hi)
        if not bad.any():
            break
        hi = np.where(bad, hi + step, hi)
        step = np.where(bad, 2 * step, step)
    else:
        raise InfeasibleThresholdError(
            f"threshold {lam} is below the infimum of the empirical loss mean"
        )
    for _ in range(MAX_BISECTIONS):
        open_ = (hi - lo) > tol
        if segment_stop:
            open_ &= ((values > lo[:, None]) & (values < hi[:, None])).any(axis=1)
        if not open_.any():
            break
        mid = 0.5 * (lo + hi)
        # float resolution reached: nothing left to split
        open_ &= (mid > lo) & (mid < hi)
        if not open_.any():
            break
        ok = feasible(mid)
        hi = np.where(open_ & ok, mid, hi)
        lo = np.where(open_ & ~ok, mid, lo)
    return lo, hi


def shortfall_root(values: np.ndarray, loss: L.LossFn, lam: float,
                   weights: Optional[np.ndarray] = None,
                   tol: float = DEFAULT_TOL) -> np.ndarray:
    """Smallest ``k`` (to ``tol``) with ``mean_w l(values - k) <= lam``, per row.

    ``values`` has shape ``(R, n)``; ``weights`` (shape ``(n,)``) default to
    uniform. The bracket starts at ``[min - 1, max + 1]`` and doubles outward
    until it straddles the crossing.
    """
    return _bisect(values, loss, lam, weights, tol)[1]


def _expectile_rows(values: np.ndarray, nu: float, weights, tol: float) -> np.ndarray:
    lo, hi = _bisect(values, L.expectile_l(nu), 0.0, weights, tol, segment_stop=True)
    # no sample strictly inside (lo, hi): the identification equation is
    # linear there, so solve it exactly
    w = np.where(values >= hi[:, None], nu, 1.0 - nu)
    if weights is not None:
        w = w * weights
    exact = (w * values).sum(axis=1) / w.sum(axis=1)
    inside = ~((values > lo[:, None]) & (values < hi[:, None])).any(axis=1)
    return np.where(inside, np.clip(exact, lo, hi), hi)


def empirical_expectile(samples, nu: float, tol: float = DEFAULT_TOL):
    """Root of ``mean(l_nu(X_i - k)) = 0``; the mean when ``nu = 0.5``."""
    L.expectile_l(nu)
    x, flat = _as_rows(samples)
    out = _expectile_rows(x, nu, None, tol)
    degenerate = x.min(axis=1) == x.max(axis=1)
    out = np.where(degenerate, x[:, 0], out)
    return float(out[0]) if flat else out


def _check_ubsr_loss(loss: L.LossFn) -> None:
    if not loss.ubsr_eligible:
        raise ArgumentError(f"loss {loss.name!r} is not continuous and nondecreasing")


def empirical_ubsr(samples, loss: L.LossFn, lam: float, tol: float = DEFAULT_TOL):
    """``inf{k : mean(l(X_i - k)) <= lam}``."""
    _check_ubsr_loss(loss)
    x, flat = _as_rows(samples)
    out = shortfall_root(x, loss, lam, None, tol)
    return float(out[0]) if flat else out


def _check_oce_loss(loss: L.LossFn) -> None:
    if not loss.oce_eligible:
        raise ArgumentError(
            f"loss {loss.name!r} is not OCE-eligible (needs convex, increasing, slope crossing 1)"
        )


def _oce_from_root(values, loss, weights, tol):
    kstar = shortfall_root(values, loss.derivative_loss(), 1.0, weights, tol)
    return kstar + _weighted_mean(loss.eval(values - kstar[:, None]), weights), kstar


def empirical_oce(samples, loss: L.LossFn, tol: float = DEFAULT_TOL):
    """Returns ``(oce, kstar)`` with ``kstar`` the shortfall root of ``l'`` at level 1."""
    _check_oce_loss(loss)
    x, flat = _as_rows(samples)
    oce, kstar = _oce_from_root(x, loss, None, tol)
    if flat:
        return float(oce[0]), float(kstar[0])
    return oce, kstar


def exact_expectile(dist: DiscreteDist, nu: float, tol: float = DEFAULT_TOL) -> float:
    L.expectile_l(nu)
    if dist.values.size == 1:
        return float(dist.values[0])
    return float(_expectile_rows(dist.values[None, :], nu, dist.probs, tol)[0])


def exact_ubsr(dist: DiscreteDist, loss: L.LossFn, lam: float, tol: float = DEFAULT_TOL) -> float:
    _check_ubsr_loss(loss)
    return float(shortfall_root(dist.values[None, :], loss, lam, dist.probs, tol)[0])


def exact_oce(dist: DiscreteDist, loss: L.LossFn, tol: float = DEFAULT_TOL) -> Tuple[float, float]:
    _check_oce_loss(loss)
    oce, kstar = _oce_from_root(dist.values[None, :], loss, dist.probs, tol)
    return float(oce[0]), float(kstar[0])


# -- risk specifications -----------------------------------------------------

EXPECTILE, UBSR, OCE = "expectile", "ubsr", "oce"


@dataclass(frozen=True)
class RiskSpec:
    kind: str
    nu: Optional[float] = None
    loss: Optional[L.LossFn] = None
    lam: Optional[float] = None

    def __post_init__(self):
        if self.kind == EXPECTILE:
            if self.nu is None:
                raise ArgumentError("expectile risk needs nu")
            L.expectile_l(self.nu)
        elif self.kind == UBSR:
            if self.loss is None or self.lam is None:
                raise ArgumentError("UBSR risk needs a loss and a threshold lambda")
            _check_ubsr_loss(self.loss)
            floor = float(self.loss.eval(-1e3))
            if self.lam < floor or not np.isfinite(self.lam):
                raise ArgumentError(
                    f"lambda={self.lam} lies below the range of loss {self.loss.name!r}"
                )
        elif self.kind == OCE:
            if self.loss is None:
                raise ArgumentError("OCE risk needs a loss")
            _check_oce_loss(self.loss)
        else:
            raise ArgumentError(f"unknown risk kind {self.kind!r}")

    @classmethod
    def expectile(cls, nu: float) -> "RiskSpec":
        return cls(EXPECTILE, nu=nu)

    @classmethod
    def ubsr(cls, loss: L.LossFn, lam: float) -> "RiskSpec":
        return cls(UBSR, loss=loss, lam=float(lam))

    @classmethod
    def oce(cls, loss: L.LossFn) -> "RiskSpec":
        return cls(OCE, loss=loss)

    @property
    def is_entropic(self) -> bool:
        return self.kind == UBSR and self.loss.name == "entropic" and self.lam == 1.0

    @property
    def double_sampled(self) -> bool:
        return self.kind == OCE or (self.kind == UBSR and not self.is_entropic)

    def describe(self) -> str:
        if self.kind == EXPECTILE:
            return f"expectile:nu={self.nu:g}"
        if self.kind == UBSR:
            return f"ubsr:loss={self.loss.spec_string},lambda={self.lam:g}"
        return f"oce:loss={self.loss.spec_string}"

    def empirical(self, samples, tol: float = DEFAULT_TOL):
        if self.kind == EXPECTILE:
            return empirical_expectile(samples, self.nu, tol)
        if self.kind == UBSR:
            return empirical_ubsr(samples, self.loss, self.lam, tol)
        return empirical_oce(samples, self.loss, tol)[0]

    def exact(self, dist: DiscreteDist, tol: float = DEFAULT_TOL) -> float:
        if self.kind == EXPECTILE:
            return exact_expectile(dist, self.nu, tol)
        if self.kind == UBSR:
            return exact_ubsr(dist, self.loss, self.lam, tol)
        return exact_oce(dist, self.loss, tol)[0]

    def residual(self, samples, estimate: float) -> float:
        """Mean identification residual at ``estimate`` (zero at a continuous crossing)."""
        x = np.asarray(samples, dtype=float)
        if self.kind == EXPECTILE:
            return float(L.expectile_l(self.nu).eval(x - estimate).mean())
        if self.kind == UBSR:
            return float(self.loss.eval(x - estimate).mean() - self.lam)
        _, kstar = empirical_oce(x, self.loss)
        return float(self.loss.deriv(x - kstar).mean() - 1.0)
