"""Loss functions for shortfall (UBSR), OCE and expectile risks.

Conventions: ``x+ = max(x, 0)``, ``x- = max(-x, 0)``. At a kink the
derivative takes the left limit, so the ``x <= 0`` branch owns zero.
All evaluators are vectorised over numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ArgumentError, RangeError

EXP_CAP = 700.0


@dataclass(frozen=True)
class LossFn:
    name: str
    eval: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    convex: bool
    increasing: bool
    strictly_increasing: bool
    continuously_differentiable: bool
    lipschitz_bound: Optional[float] = None
    kinks: tuple = ()
    params: dict = field(default_factory=dict)
    crosses_one: bool = False
    continuous: bool = True

    def __call__(self, x):
        return self.eval(x)

    @property
    def ubsr_eligible(self) -> bool:
        # the shortfall root exists and is unique from the left for any
        # continuous nondecreasing loss; strictness is needed by the gradient
        return self.increasing and self.continuous

    @property
    def oce_eligible(self) -> bool:
        return self.convex and self.increasing and self.crosses_one

    @property
    def spec_string(self) -> str:
        args = ",".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"{self.name}:{args}" if args else self.name

    def derivative_loss(self) -> "LossFn":
        """The derivative as a loss in its own right (used by OCE via UBSR)."""
        if not self.convex:
            raise ArgumentError(f"{self.name} is not convex; its derivative is not monotone")
        return LossFn(
            name=f"d[{self.name}]",
            eval=self.deriv,
            deriv=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
            convex=False,
            increasing=True,
            strictly_increasing=False,
            continuously_differentiable=False,
            continuous=self.continuously_differentiable,
        )


def _pos(x):
    return np.maximum(x, 0.0)


def _neg(x):
    return np.maximum(-x, 0.0)


def _arr(x):
    return np.asarray(x, dtype=float)


def make_entropic(beta: float) -> LossFn:
    """``l(x) = exp(beta x)``."""
    if not beta > 0:
        raise ArgumentError(f"entropic beta must be positive, got {beta}")

    def _exp_arg(x):
        z = beta * _arr(x)
        if np.any(z > EXP_CAP):
            raise RangeError(f"entropic exponent {np.max(z):.1f} exceeds {EXP_CAP}")
        return z

    return LossFn(
        "entropic",
        lambda x: np.exp(_exp_arg(x)),
        lambda x: beta * np.exp(_exp_arg(x)),
        convex=True, increasing=True, strictly_increasing=True,
        continuously_differentiable=True, params={"beta": beta}, crosses_one=True,
    )


def make_identity() -> LossFn:
    return LossFn(
        "identity",
        lambda x: _arr(x).copy(),
        lambda x: np.ones_like(_arr(x)),
        convex=True, increasing=True, strictly_increasing=True,
        continuously_differentiable=True, lipschitz_bound=1.0,
    )


def make_quadratic(b: float) -> LossFn:
    """``l(x) = (x+)^2 - b x-``; nonconvex at 0 when ``b > 0``."""
    if not b >= 0:
        raise ArgumentError(f"quadratic b must be nonnegative, got {b}")
    return LossFn(
        "quadratic",
        lambda x: _pos(_arr(x)) ** 2 - b * _neg(_arr(x)),
        lambda x: np.where(_arr(x) > 0, 2.0 * _arr(x), b),
        convex=(b == 0), increasing=True, strictly_increasing=(b > 0),
        continuously_differentiable=(b == 0), kinks=(0.0,), params={"b": b},
        crosses_one=True,
    )


def make_polynomial(a: float) -> LossFn:
    """``l(x) = (x+)^a / a``."""
    if not a >= 1:
        raise ArgumentError(f"polynomial exponent must be >= 1, got {a}")
    return LossFn(
        "polynomial",
        lambda x: _pos(_arr(x)) ** a / a,
        lambda x: np.where(_arr(x) > 0, _pos(_arr(x)) ** (a - 1), 0.0),
        convex=True, increasing=True, strictly_increasing=False,
        continuously_differentiable=(a > 1), lipschitz_bound=1.0 if a == 1 else None,
        kinks=(0.0,), params={"a": a}, crosses_one=True,
    )


def make_cvar(alpha: float) -> LossFn:
    """``l(x) = x+ / (1 - alpha)``."""
    if not 0 < alpha < 1:
        raise ArgumentError(f"CVaR level must lie in (0, 1), got {alpha}")
    scale = 1.0 / (1.0 - alpha)
    return LossFn(
        "cvar",
        lambda x: scale * _pos(_arr(x)),
        lambda x: np.where(_arr(x) > 0, scale, 0.0),
        convex=True, increasing=True, strictly_increasing=False,
        continuously_differentiable=False, lipschitz_bound=scale, kinks=(0.0,),
        params={"alpha": alpha}, crosses_one=True,
    )


def make_onpv(a: float, b: float) -> LossFn:
    """``l(x) = a x+ - b x-`` with ``a > 1 > b > 0``."""
    if not (a > 1 and 0 < b < 1):
        raise ArgumentError(f"ONPV needs a > 1 > b > 0, got a={a}, b={b}")
    return LossFn(
        "onpv",
        lambda x: a * _pos(_arr(x)) - b * _neg(_arr(x)),
        lambda x: np.where(_arr(x) > 0, a, b),
        convex=True, increasing=True, strictly_increasing=True,
        continuously_differentiable=False, lipschitz_bound=a, kinks=(0.0,),
        params={"a": a, "b": b}, crosses_one=True,
    )


def make_mean_variance(a: float) -> LossFn:
    """``l(x) = ((1 + x)+)^a / a - 1/a``; ``a = 2`` is the mean-variance risk."""
    if not a > 1:
        raise ArgumentError(f"mean-variance exponent must exceed 1, got {a}")
    return LossFn(
        "meanvar",
        lambda x: _pos(1.0 + _arr(x)) ** a / a - 1.0 / a,
        lambda x: _pos(1.0 + _arr(x)) ** (a - 1),
        convex=True, increasing=True, strictly_increasing=False,
        continuously_differentiable=True, kinks=(-1.0,), params={"a": a},
        crosses_one=True,
    )


def make_quartic() -> LossFn:
    """``l(x) = (1 + x)^4 (1 + x)+ - 1``, i.e. ``((1 + x)+)^5 - 1``."""
    return LossFn(
        "quartic",
        lambda x: (1.0 + _arr(x)) ** 4 * _pos(1.0 + _arr(x)) - 1.0,
        lambda x: 5.0 * _pos(1.0 + _arr(x)) ** 4,
        convex=True, increasing=True, strictly_increasing=False,
        continuously_differentiable=True, kinks=(-1.0,), crosses_one=True,
    )


def _check_nu(nu: float) -> None:
    if not 0 < nu < 1:
        raise ArgumentError(f"expectile level must lie in (0, 1), got {nu}")


def expectile_e(nu: float) -> LossFn:
    """Asymmetric square ``x^2 |nu - 1{x <= 0}|`` minimised by the expectile."""
    _check_nu(nu)
    w = lambda x: np.where(_arr(x) > 0, nu, 1.0 - nu)
    return LossFn(
        "expectile_e",
        lambda x: w(x) * _arr(x) ** 2,
        lambda x: 2.0 * w(x) * _arr(x),
        convex=True, increasing=False, strictly_increasing=False,
        continuously_differentiable=True, params={"nu": nu},
    )


def expectile_l(nu: float) -> LossFn:
    """Identification function ``nu x 1{x > 0} + (1 - nu) x 1{x <= 0}``."""
    _check_nu(nu)
    return LossFn(
        "expectile_l",
        lambda x: np.where(_arr(x) > 0, nu, 1.0 - nu) * _arr(x),
        lambda x: np.where(_arr(x) > 0, nu, 1.0 - nu),
        convex=(nu >= 0.5), increasing=True, strictly_increasing=True,
        continuously_differentiable=(nu == 0.5), lipschitz_bound=max(nu, 1.0 - nu),
        kinks=(0.0,), params={"nu": nu},
    )


def expectile_lprime(nu: float) -> LossFn:
    """Step weight ``nu 1{x > 0} + (1 - nu) 1{x <= 0}``."""
    _check_nu(nu)
    return LossFn(
        "expectile_lprime",
        lambda x: np.where(_arr(x) > 0, nu, 1.0 - nu),
        lambda x: np.zeros_like(_arr(x)),
        convex=False, increasing=(nu >= 0.5), strictly_increasing=False,
        continuously_differentiable=False, kinks=(0.0,),
        params={"nu": nu}, continuous=(nu == 0.5),
    )


CONSTRUCTORS = {
    "entropic": (make_entropic, ("beta",)),
    "identity": (make_identity, ()),
    "quadratic": (make_quadratic, ("b",)),
    "polynomial": (make_polynomial, ("a",)),
    "cvar": (make_cvar, ("alpha",)),
    "onpv": (make_onpv, ("a", "b")),
    "meanvar": (make_mean_variance, ("a",)),
    "quartic": (make_quartic, ()),
}


def make_loss(name: str, **params) -> LossFn:
    try:
        ctor, names = CONSTRUCTORS[name]
    except KeyError:
        raise ArgumentError(f"unknown loss {name!r}; known: {sorted(CONSTRUCTORS)}")
    missing = [p for p in names if p not in params]
    extra = [p for p in params if p not in names]
    if missing or extra:
        raise ArgumentError(f"loss {name!r} takes parameters {list(names)}, got {sorted(params)}")
    return ctor(*(float(params[p]) for p in names))
