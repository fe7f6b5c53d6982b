"""Finite-horizon MDPs with finite-support cost distributions.

Sampling is vectorised: a batch of ``m`` trajectories is driven by a block of
uniform variates of shape ``(m, T, 4)`` drawn from one generator, and row
``j`` of that block fully determines trajectory ``j``. Since numpy fills the
block in C order, the first rows are identical for any batch size drawn from
the same seed, which gives the per-index sub-stream contract without creating
one generator per trajectory.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence

import numpy as np

from . import policy as pol
from .errors import ArgumentError, CapacityError, ConfigurationError, ParseError

PROB_ATOL = 1e-12
DEFAULT_ENUMERATION_CAP = 10**6


def _check_prob_vector(p: np.ndarray, what: str) -> None:
    if np.any(p < 0):
        raise ConfigurationError(f"{what} has negative entries")
    total = p.sum(axis=-1)
    if np.any(np.abs(total - 1.0) > PROB_ATOL):
        raise ConfigurationError(f"{what} does not sum to 1 (got {np.atleast_1d(total).tolist()[:4]})")


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MdpSpec:
    """Immutable finite-horizon MDP.

    ``cost_values`` and ``cost_probs`` have shape ``(S, A, S, K)``; support
    lists shorter than ``K`` are padded with zero-probability atoms.
    """

    transition: np.ndarray
    cost_values: np.ndarray
    cost_probs: np.ndarray
    initial_dist: np.ndarray
    gamma: float
    horizon: int
    features: Optional[np.ndarray] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ConfigurationError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A, _ = P.shape
        if S < 1 or A < 1:
            raise ConfigurationError("need at least one state and one action")
        _check_prob_vector(P, "transition row")
        vals = np.array(self.cost_values, dtype=float)
        probs = np.array(self.cost_probs, dtype=float)
        if vals.shape != probs.shape or vals.shape[:3] != (S, A, S):
            raise ConfigurationError("cost support arrays must have shape (S, A, S, K)")
        if not np.all(np.isfinite(vals)):
            raise ConfigurationError("cost support has non-finite values")
        _check_prob_vector(probs, "cost distribution")
        p0 = np.array(self.initial_dist, dtype=float)
        if p0.shape != (S,):
            raise ConfigurationError(f"initial_dist must have shape ({S},)")
        _check_prob_vector(p0, "initial_dist")
        gamma = float(self.gamma)
        if not 0.0 <= gamma <= 1.0:
            raise ConfigurationError(f"gamma must lie in [0, 1], got {gamma}")
        horizon = int(self.horizon)
        if horizon < 1 or horizon != self.horizon:
            raise ConfigurationError(f"horizon must be a positive integer, got {self.horizon}")
        object.__setattr__(self, "transition", _freeze(P))
        object.__setattr__(self, "cost_values", _freeze(vals))
        object.__setattr__(self, "cost_probs", _freeze(probs))
        object.__setattr__(self, "initial_dist", _freeze(p0))
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "horizon", horizon)
        if self.features is not None:
            phi = np.array(self.features, dtype=float)
            if phi.ndim != 3 or phi.shape[:2] != (S, A):
                raise ConfigurationError("features must have shape (S, A, d)")
            object.__setattr__(self, "features", _freeze(phi))

    @classmethod
    def build(cls, transition, cost, initial_dist, gamma, horizon, features=None) -> "MdpSpec":
        """Build from a nested cost description.

        ``cost[s][a][s2]`` is either a number (deterministic cost) or a list of
        ``(value, probability)`` pairs.
        """
        P = np.asarray(transition, dtype=float)
        if P.ndim != 3:
            raise ConfigurationError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A, _ = P.shape
        supports = [[[None] * S for _ in range(A)] for _ in range(S)]
        K = 1
        try:
            for s in range(S):
                for a in range(A):
                    for s2 in range(S):
                        entry = cost[s][a][s2]
                        if np.ndim(entry) == 0:
                            sup = [(float(entry), 1.0)]
                        else:
                            sup = [(float(v), float(p)) for v, p in entry]
                        if not sup:
                            raise ConfigurationError(f"empty cost support at {(s, a, s2)}")
                        supports[s][a][s2] = sup
                        K = max(K, len(sup))
        except (IndexError, TypeError) as exc:
            raise ConfigurationError(f"cost table does not match (S, A, S) = {(S, A, S)}: {exc}")
        vals = np.zeros((S, A, S, K))
        probs = np.zeros((S, A, S, K))
        for s in range(S):
            for a in range(A):
                for s2 in range(S):
                    for k, (v, p) in enumerate(supports[s][a][s2]):
                        vals[s, a, s2, k] = v
                        probs[s, a, s2, k] = p
        return cls(P, vals, probs, np.asarray(initial_dist, dtype=float), gamma, horizon, features)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    def cost_support(self, s: int, a: int, s2: int) -> list:
        mask = self.cost_probs[s, a, s2] > 0
        return list(zip(self.cost_values[s, a, s2][mask].tolist(),
                        self.cost_probs[s, a, s2][mask].tolist()))

    def tabular_policy(self) -> pol.PolicySpec:
        return pol.PolicySpec.tabular(self.num_states, self.num_actions)

    def feature_policy(self) -> pol.PolicySpec:
        if self.features is None:
            raise ConfigurationError("MDP carries no feature map")
        return pol.PolicySpec.from_features(self.features)

    # -- cached cumulative tables for inverse-CDF sampling ------------------
    def _cdf(self, name: str, p: np.ndarray) -> np.ndarray:
        if name not in self._cache:
            c = np.cumsum(p, axis=-1)
            last = c[..., -1:].copy()
            last[last == 0] = 1.0
            c = c / last
            self._cache[name] = c
        return self._cache[name]


@dataclass(frozen=True)
class Trajectory:
    """T steps of (state, action, realised cost) plus the terminal state."""

    steps: tuple
    terminal_state: int

    @property
    def states(self) -> np.ndarray:
        return np.array([s for s, _, _ in self.steps], dtype=int)

    @property
    def actions(self) -> np.ndarray:
        return np.array([a for _, a, _ in self.steps], dtype=int)

    @property
    def costs(self) -> np.ndarray:
        return np.array([c for _, _, c in self.steps], dtype=float)

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class WeightedTrajectory:
    trajectory: Trajectory
    probability: float


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """Column storage for ``m`` trajectories: arrays of shape ``(m, T)``."""

    states: np.ndarray
    actions: np.ndarray
    costs: np.ndarray
    terminal: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]

    def __getitem__(self, j):
        if isinstance(j, slice):
            return TrajectoryBatch(self.states[j], self.actions[j], self.costs[j], self.terminal[j])
        steps = tuple(
            (int(s), int(a), float(c))
            for s, a, c in zip(self.states[j], self.actions[j], self.costs[j])
        )
        return Trajectory(steps, int(self.terminal[j]))

    def __iter__(self) -> Iterator[Trajectory]:
        for j in range(len(self)):
            yield self[j]

    def discounted_costs(self, gamma: float) -> np.ndarray:
        T = self.costs.shape[-1]
        return self.costs @ (gamma ** np.arange(T))

    @classmethod
    def from_trajectories(cls, trajs: Sequence[Trajectory]) -> "TrajectoryBatch":
        if isinstance(trajs, TrajectoryBatch):
            return trajs
        trajs = list(trajs)
        if not trajs:
            raise ArgumentError("empty trajectory batch")
        T = len(trajs[0])
        if any(len(t) != T for t in trajs):
            raise ArgumentError("trajectories in a batch must share the horizon")
        return cls(
            np.array([t.states for t in trajs], dtype=int).reshape(len(trajs), T),
            np.array([t.actions for t in trajs], dtype=int).reshape(len(trajs), T),
            np.array([t.costs for t in trajs], dtype=float).reshape(len(trajs), T),
            np.array([t.terminal_state for t in trajs], dtype=int),
        )


def as_batch(trajs) -> TrajectoryBatch:
    return TrajectoryBatch.from_trajectories(trajs)


def discounted_cost(traj, gamma: float) -> float:
    if not 0.0 <= gamma <= 1.0:
        raise ArgumentError(f"gamma must lie in [0, 1], got {gamma}")
    costs = np.asarray(traj.costs, dtype=float)
    return float(costs @ (gamma ** np.arange(costs.shape[-1])))


def _inverse_cdf(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    # u in (0, 1]; first index whose cdf reaches u
    idx = (cdf_rows < u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


def simulate(spec: MdpSpec, probs: np.ndarray, u: np.ndarray) -> TrajectoryBatch:
    """Roll out trajectories from uniforms ``u`` of shape ``(m, T, 4)``.

    ``probs`` is the ``(S, A)`` action-probability table of a stationary policy.
    """
    m, T, _ = u.shape
    if T != spec.horizon:
        raise ArgumentError(f"uniform block has {T} steps, horizon is {spec.horizon}")
    c_pi = np.cumsum(probs, axis=1)
    c_pi /= c_pi[:, -1:]
    c_p0 = spec._cdf("p0", spec.initial_dist[None, :])[0]
    c_P = spec._cdf("P", spec.transition)
    c_C = spec._cdf("C", spec.cost_probs)
    states = np.empty((m, T), dtype=int)
    actions = np.empty((m, T), dtype=int)
    costs = np.empty((m, T))
    s = _inverse_cdf(np.broadcast_to(c_p0, (m, c_p0.size)), u[:, 0, 0])
    for t in range(T):
        a = _inverse_cdf(c_pi[s], u[:, t, 1])
        s2 = _inverse_cdf(c_P[s, a], u[:, t, 2])
        k = _inverse_cdf(c_C[s, a, s2], u[:, t, 3])
        states[:, t] = s
        actions[:, t] = a
        costs[:, t] = spec.cost_values[s, a, s2, k]
        s = s2
    return TrajectoryBatch(states, actions, costs, s)


def _uniforms(rng: np.random.Generator, m: int, T: int) -> np.ndarray:
    return 1.0 - rng.random((m, T, 4))


def sample_batch(spec: MdpSpec, policy: pol.PolicySpec, theta, m: int,
                 rng: np.random.Generator) -> TrajectoryBatch:
    """Sample ``m`` independent trajectories under ``pi_theta``."""
    if int(m) != m or m < 1:
        raise ArgumentError(f"batch size must be a positive integer, got {m}")
    _check_pairing(spec, policy)
    probs = pol.action_prob_table(policy, theta)
    return simulate(spec, probs, _uniforms(rng, int(m), spec.horizon))


def sample_trajectory(spec: MdpSpec, policy: pol.PolicySpec, theta,
                      rng: np.random.Generator) -> Trajectory:
    return sample_batch(spec, policy, theta, 1, rng)[0]


def _check_pairing(spec: MdpSpec, policy: pol.PolicySpec) -> None:
    if (policy.num_states, policy.num_actions) != (spec.num_states, spec.num_actions):
        raise ConfigurationError(
            f"policy is sized for {(policy.num_states, policy.num_actions)}, "
            f"MDP has {(spec.num_states, spec.num_actions)}"
        )


# -- exact enumeration -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Enumeration:
    """Every trajectory with nonzero probability, in column form.

    ``base_prob`` holds the policy-free factor P0 * prod P * prod Pr(cost);
    multiply by the product of action probabilities to get ``p_theta(tau)``.
    """

    states: np.ndarray
    actions: np.ndarray
    costs: np.ndarray
    terminal: np.ndarray
    base_prob: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]

    def probabilities(self, policy: pol.PolicySpec, theta) -> np.ndarray:
        logp = pol.log_prob_table(policy, theta)
        return self.base_prob * np.exp(logp[self.states, self.actions].sum(axis=1))

    def discounted_costs(self, gamma: float) -> np.ndarray:
        return self.costs @ (gamma ** np.arange(self.costs.shape[1]))

    def batch(self) -> TrajectoryBatch:
        return TrajectoryBatch(self.states, self.actions, self.costs, self.terminal)


def count_trajectories(spec: MdpSpec) -> int:
    """Number of trajectories with nonzero probability under any softmax policy."""
    branch = np.einsum(
        "sat,satk->st",
        (spec.transition > 0).astype(float),
        (spec.cost_probs > 0).astype(float),
    )
    n = (spec.initial_dist > 0).astype(float)
    for _ in range(spec.horizon):
        n = n @ branch
    return int(round(n.sum()))


def enumerate_structure(spec: MdpSpec, cap: int = DEFAULT_ENUMERATION_CAP) -> Enumeration:
    count = count_trajectories(spec)
    if count > cap:
        raise CapacityError(f"MDP has {count} trajectories, enumeration cap is {cap}")
    key = ("enum",)
    if key in spec._cache:
        return spec._cache[key]
    S, A = spec.num_states, spec.num_actions
    branches = [[] for _ in range(S)]  # per state: (a, s2, value, prob)
    for s in range(S):
        for a in range(A):
            for s2 in np.flatnonzero(spec.transition[s, a] > 0):
                for k in np.flatnonzero(spec.cost_probs[s, a, s2] > 0):
                    branches[s].append((a, int(s2), spec.cost_values[s, a, s2, k],
                                        spec.transition[s, a, s2] * spec.cost_probs[s, a, s2, k]))
    starts = np.flatnonzero(spec.initial_dist > 0)
    cur_state = starts
    prob = spec.initial_dist[starts]
    hist_s = np.empty((len(starts), 0), dtype=int)
    hist_a = np.empty((len(starts), 0), dtype=int)
    hist_c = np.empty((len(starts), 0))
    for _ in range(spec.horizon):
        rows, new_a, new_s, new_c, new_p = [], [], [], [], []
        for j, s in enumerate(cur_state):
            for a, s2, v, p in branches[s]:
                rows.append(j)
                new_a.append(a)
                new_s.append(s2)
                new_c.append(v)
                new_p.append(p)
        rows = np.asarray(rows, dtype=int)
        hist_s = np.column_stack([hist_s[rows], cur_state[rows]])
        hist_a = np.column_stack([hist_a[rows], np.asarray(new_a, dtype=int)])
        hist_c = np.column_stack([hist_c[rows], np.asarray(new_c, dtype=float)])
        prob = prob[rows] * np.asarray(new_p)
        cur_state = np.asarray(new_s, dtype=int)
    enum = Enumeration(hist_s, hist_a, hist_c, cur_state, prob)
    spec._cache[key] = enum
    return enum


def enumerate_trajectories(spec: MdpSpec, policy: pol.PolicySpec, theta,
                           cap: int = DEFAULT_ENUMERATION_CAP) -> List[WeightedTrajectory]:
    """Every trajectory with its exact probability under ``pi_theta``."""
    _check_pairing(spec, policy)
    enum = enumerate_structure(spec, cap)
    probs = enum.probabilities(policy, theta)
    batch = enum.batch()
    return [WeightedTrajectory(batch[j], float(probs[j])) for j in range(len(enum))]


# -- file formats ------------------------------------------------------------

def mdp_to_dict(spec: MdpSpec) -> dict:
    S, A = spec.num_states, spec.num_actions
    out = {
        "num_states": S,
        "num_actions": A,
        "gamma": spec.gamma,
        "horizon": spec.horizon,
        "initial_dist": spec.initial_dist.tolist(),
        "transition": spec.transition.tolist(),
        "cost": [[[[list(atom) for atom in spec.cost_support(s, a, s2)]
                   for s2 in range(S)] for a in range(A)] for s in range(S)],
    }
    if spec.features is not None:
        out["features"] = spec.features.tolist()
    return out


def mdp_from_dict(data: dict, negate_costs: bool = False) -> MdpSpec:
    try:
        S, A = int(data["num_states"]), int(data["num_actions"])
        sign = -1.0 if negate_costs else 1.0
        cost = data["cost"]
        if negate_costs:
            cost = [[[
                sign * c if np.ndim(c) == 0 else [(sign * v, p) for v, p in c]
                for c in row_a] for row_a in row_s] for row_s in cost]
        spec = MdpSpec.build(data["transition"], cost, data["initial_dist"],
                             data["gamma"], data["horizon"], data.get("features"))
    except KeyError as exc:
        raise ParseError(f"MDP file is missing key {exc.args[0]!r}")
    if (spec.num_states, spec.num_actions) != (S, A):
        raise ConfigurationError("declared sizes disagree with the transition table")
    return spec


def save_mdp(spec: MdpSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(mdp_to_dict(spec), fh, indent=1)


def load_mdp(path, negate_costs: bool = False) -> MdpSpec:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}")
    return mdp_from_dict(data, negate_costs)


def trajectories_to_csv(trajs, out=None) -> str:
    """CSV rows ``(traj, t, s, a, cost)``; returns the text when ``out`` is None."""
    buf = out if out is not None else io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["traj", "t", "s", "a", "cost"])
    for j, traj in enumerate(trajs):
        for t, (s, a, c) in enumerate(traj.steps):
            writer.writerow([j, t, s, a, repr(c)])
    return buf.getvalue() if out is None else ""
