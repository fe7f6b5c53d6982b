"""Small synthetic MDPs whose risk structure is known in closed form.

Each catalogue entry documents which action (bandits) or branch (chains)
each risk measure prefers; :func:`verify_entry` recomputes those orderings
with the exact risk oracles instead of trusting the documentation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from . import losses as L
from . import mdp as M
from . import risk as R
from .errors import ArgumentError


def _as_dist(d) -> R.DiscreteDist:
    if isinstance(d, R.DiscreteDist):
        return d
    return R.DiscreteDist.from_atoms(d)


def make_two_arm_bandit(safe_cost: float, risky_costs) -> M.MdpSpec:
    """One state, two actions, ``T = 1``: action 0 is safe, action 1 risky."""
    risky = _as_dist(risky_costs)
    if not np.isfinite(safe_cost):
        raise ArgumentError("safe cost must be finite")
    return M.MdpSpec.build(
        transition=[[[1.0], [1.0]]],
        cost=[[[float(safe_cost)], [risky.atoms]]],
        initial_dist=[1.0],
        gamma=1.0,
        horizon=1,
    )


def bandit_arm_dists(spec: M.MdpSpec) -> List[R.DiscreteDist]:
    return [R.DiscreteDist.from_atoms(spec.cost_support(0, a, 0)) for a in range(spec.num_actions)]


def make_risky_chain(length: int, branch_cost_spread: float, gamma: float = 0.9,
                     mean_cost: float = 1.0) -> M.MdpSpec:
    """Equal-mean two-branch chain with ``T = length``.

    State 0 is the start, state 1 the low-variance branch, state 2 the
    high-variance branch. From the start, action ``a`` enters branch ``1 + a``;
    inside a branch, action 0 stays and action 1 switches branch. The cost of
    a step is drawn from the destination branch: ``mean +- spread/4`` on the
    low-variance branch, ``mean +- spread`` on the other, each with
    probability 1/2. Every policy has the same expected return.
    """
    if int(length) != length or length < 2:
        raise ArgumentError(f"chain length must be an integer >= 2, got {length}")
    d = float(branch_cost_spread)
    if d < 0:
        raise ArgumentError("spread must be nonnegative")
    low = [(mean_cost - d / 4, 0.5), (mean_cost + d / 4, 0.5)] if d > 0 else mean_cost
    high = [(mean_cost - d, 0.5), (mean_cost + d, 0.5)] if d > 0 else mean_cost
    branch_cost = {1: low, 2: high}
    P = np.zeros((3, 2, 3))
    P[0, 0, 1] = P[0, 1, 2] = 1.0
    P[1, 0, 1] = P[1, 1, 2] = 1.0
    P[2, 0, 2] = P[2, 1, 1] = 1.0
    cost = [[[branch_cost.get(s2, 0.0) for s2 in range(3)] for _ in range(2)] for _ in range(3)]
    return M.MdpSpec.build(P, cost, [1.0, 0.0, 0.0], gamma, int(length))


def chain_branch_dists(spec: M.MdpSpec) -> List[R.DiscreteDist]:
    """Return laws of the two stay-in-branch policies (branch 1, branch 2)."""
    out = []
    for branch in (1, 2):
        atoms = spec.cost_support(branch, 0, branch)
        dist = R.DiscreteDist.from_atoms([(0.0, 1.0)])
        for t in range(spec.horizon):
            v = (dist.values[:, None] + spec.gamma ** t * np.array([x for x, _ in atoms])[None, :]).ravel()
            p = (dist.probs[:, None] * np.array([q for _, q in atoms])[None, :]).ravel()
            dist = R.DiscreteDist.from_weighted(v, p)
        out.append(dist)
    return out


def make_random_mdp(num_states: int = 2, num_actions: int = 2, horizon: int = 3,
                    gamma: float = 0.9, seed: int = 0, features_dim: int = 0) -> M.MdpSpec:
    """Dirichlet transitions and two-atom costs; optional Gaussian features."""
    rng = np.random.default_rng(seed)
    S, A = num_states, num_actions
    P = rng.dirichlet(np.ones(S), size=(S, A))
    cost = []
    for s in range(S):
        row = []
        for a in range(A):
            cell = []
            for _ in range(S):
                v = np.round(rng.uniform(-1, 2, size=2), 3)
                p = round(float(rng.uniform(0.2, 0.8)), 3)
                cell.append([(float(v[0]), p), (float(v[1]), 1.0 - p)])
            row.append(cell)
        cost.append(row)
    p0 = rng.dirichlet(np.ones(S))
    feats = rng.normal(size=(S, A, features_dim)) if features_dim else None
    return M.MdpSpec.build(P, cost, p0, gamma, horizon, feats)


# -- catalogue -----------------------------------------------------------

# Risk specifications exercised by the documented orderings and the tests.
EXPECTILE_AVERSE = R.RiskSpec.expectile(0.65)
EXPECTILE_SEEKING = R.RiskSpec.expectile(0.35)
MEAN = R.RiskSpec.ubsr(L.make_identity(), 0.0)
ENTROPIC = R.RiskSpec.ubsr(L.make_entropic(0.5), 1.0)
QUADRATIC = R.RiskSpec.ubsr(L.make_quadratic(1e-2), 0.5)
MEANVAR = R.RiskSpec.oce(L.make_mean_variance(2.0))
CVAR = R.RiskSpec.oce(L.make_cvar(0.9))


@dataclass(frozen=True)
class EnvCatalogEntry:
    name: str
    builder: Callable[..., M.MdpSpec]
    params: dict
    description: str
    # (risk, preferred action or branch index) pairs
    orderings: Tuple[Tuple[R.RiskSpec, int], ...] = ()
    kind: str = "bandit"

    def build(self) -> M.MdpSpec:
        return self.builder(**self.params)

    def option_dists(self) -> List[R.DiscreteDist]:
        spec = self.build()
        if self.kind == "bandit":
            return bandit_arm_dists(spec)
        if self.kind == "chain":
            return chain_branch_dists(spec)
        return []


def catalog() -> List[EnvCatalogEntry]:
    return [
        EnvCatalogEntry(
            "risky_safe_bandit",
            make_two_arm_bandit,
            {"safe_cost": 2.4, "risky_costs": [(0.0, 0.8), (10.0, 0.2)]},
            "risky arm has the lower mean (2.0 vs 2.4) and a 20% chance of cost 10; "
            "risk-averse measures prefer the safe arm, the mean and risk-seeking "
            "expectiles prefer the risky arm",
            orderings=(
                (EXPECTILE_AVERSE, 0), (EXPECTILE_SEEKING, 1), (MEAN, 1),
                (ENTROPIC, 0), (QUADRATIC, 0), (MEANVAR, 0), (CVAR, 0),
            ),
        ),
        EnvCatalogEntry(
            "mild_bandit",
            make_two_arm_bandit,
            {"safe_cost": 0.6, "risky_costs": [(0.0, 0.8), (2.5, 0.2)]},
            "risky_safe_bandit shrunk by a factor 4; small costs keep the finite-m "
            "bias of the ratio estimators negligible at m = 1000",
            orderings=(
                (EXPECTILE_AVERSE, 0), (EXPECTILE_SEEKING, 1), (MEAN, 1),
                (ENTROPIC, 0), (QUADRATIC, 0), (MEANVAR, 0), (CVAR, 0),
            ),
        ),
        EnvCatalogEntry(
            "rare_tail_bandit",
            make_two_arm_bandit,
            {"safe_cost": 0.5, "risky_costs": [(0.0, 0.92), (5.5, 0.08)]},
            "risky arm has the lower mean (0.44 vs 0.5) but a rare cost of 5.5; "
            "risk-averse measures prefer the safe arm, the mean and risk-seeking "
            "expectiles prefer the risky arm",
            orderings=(
                (EXPECTILE_AVERSE, 0), (EXPECTILE_SEEKING, 1), (MEAN, 1),
                (ENTROPIC, 0), (QUADRATIC, 0), (MEANVAR, 0), (CVAR, 0),
            ),
        ),
        EnvCatalogEntry(
            "heavy_tail_bandit",
            make_two_arm_bandit,
            {"safe_cost": 1.0, "risky_costs": [(0.0, 0.9), (12.0, 0.1)]},
            "risky arm mean 1.2 exceeds the safe cost 1.0 and its tail is heavy",
            orderings=((EXPECTILE_AVERSE, 0), (EXPECTILE_SEEKING, 1), (MEAN, 0), (ENTROPIC, 0)),
        ),
        EnvCatalogEntry(
            "risky_chain",
            make_risky_chain,
            {"length": 3, "branch_cost_spread": 2.0, "gamma": 0.9},
            "two equal-mean branches; branch 2 has four times the per-step spread",
            orderings=((EXPECTILE_AVERSE, 0), (EXPECTILE_SEEKING, 1), (ENTROPIC, 0), (MEANVAR, 0)),
            kind="chain",
        ),
        EnvCatalogEntry(
            "random_small",
            make_random_mdp,
            {"num_states": 2, "num_actions": 2, "horizon": 3, "gamma": 0.9, "seed": 7},
            "generic 2-state, 2-action MDP with two-atom costs (no ordering claims)",
            kind="generic",
        ),
        EnvCatalogEntry(
            "random_features",
            make_random_mdp,
            {"num_states": 3, "num_actions": 2, "horizon": 2, "gamma": 0.8, "seed": 11,
             "features_dim": 3},
            "3-state MDP carrying a 3-dimensional feature map for feature_softmax",
            kind="generic",
        ),
    ]


def get_entry(name: str) -> EnvCatalogEntry:
    for entry in catalog():
        if entry.name == name:
            return entry
    raise ArgumentError(f"no catalogue entry named {name!r}")


def option_risks(entry: EnvCatalogEntry, risk: R.RiskSpec) -> List[float]:
    return [risk.exact(d, tol=1e-12) for d in entry.option_dists()]


def verify_entry(entry: EnvCatalogEntry) -> Dict[str, dict]:
    """Recompute each documented ordering; returns per-risk option values and a verdict."""
    report = {}
    for risk, preferred in entry.orderings:
        values = option_risks(entry, risk)
        report[risk.describe()] = {
            "values": values,
            "documented": preferred,
            "oracle": int(np.argmin(values)),
            "holds": int(np.argmin(values)) == preferred and len(set(values)) == len(values),
        }
    return report
