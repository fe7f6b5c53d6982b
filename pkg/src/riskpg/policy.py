"""Softmax policies over a finite MDP and their score functions.

Two parameterisations are supported:

* ``tabular_softmax``: one logit per (state, action), ``theta`` is the
  row-major flattening of an ``(S, A)`` table.
* ``feature_softmax``: logits are ``<theta, phi(s, a)>`` for a fixed feature
  map ``phi`` of shape ``(S, A, d)``.

Policy parameters are plain 1-D float arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ArgumentError, ConfigurationError

TABULAR = "tabular_softmax"
FEATURE = "feature_softmax"


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    num_states: int
    num_actions: int
    features: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in (TABULAR, FEATURE):
            raise ConfigurationError(f"unknown policy kind {self.kind!r}")
        if self.num_states < 1 or self.num_actions < 1:
            raise ConfigurationError("policy needs at least one state and one action")
        if self.kind == FEATURE:
            if self.features is None:
                raise ConfigurationError("feature_softmax requires a feature map")
            phi = np.array(self.features, dtype=float)
            if phi.ndim != 3 or phi.shape[:2] != (self.num_states, self.num_actions):
                raise ConfigurationError(
                    f"feature map must have shape ({self.num_states}, {self.num_actions}, d), "
                    f"got {phi.shape}"
                )
            if not np.all(np.isfinite(phi)):
                raise ConfigurationError("feature map has non-finite entries")
            phi.setflags(write=False)
            object.__setattr__(self, "features", phi)

    @classmethod
    def tabular(cls, num_states: int, num_actions: int) -> "PolicySpec":
        return cls(TABULAR, num_states, num_actions)

    @classmethod
    def from_features(cls, features) -> "PolicySpec":
        phi = np.asarray(features, dtype=float)
        if phi.ndim != 3:
            raise ConfigurationError("feature map must be a 3-D array (S, A, d)")
        return cls(FEATURE, phi.shape[0], phi.shape[1], phi)

    @property
    def dims(self) -> int:
        if self.kind == TABULAR:
            return self.num_states * self.num_actions
        return self.features.shape[2]


def check_params(policy: PolicySpec, theta) -> np.ndarray:
    """Return ``theta`` as a float vector, validating its length and finiteness."""
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.shape[0] != policy.dims:
        raise ConfigurationError(
            f"theta has shape {theta.shape}, policy expects ({policy.dims},)"
        )
    if not np.all(np.isfinite(theta)):
        raise ConfigurationError("theta has non-finite entries")
    return theta


def logits(policy: PolicySpec, theta) -> np.ndarray:
    theta = check_params(policy, theta)
    if policy.kind == TABULAR:
        return theta.reshape(policy.num_states, policy.num_actions)
    return policy.features @ theta


def action_prob_table(policy: PolicySpec, theta) -> np.ndarray:
    """Action probabilities for every state, shape ``(S, A)``."""
    z = logits(policy, theta)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_prob_table(policy: PolicySpec, theta) -> np.ndarray:
    z = logits(policy, theta)
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _check_state(policy: PolicySpec, s: int) -> None:
    if not 0 <= s < policy.num_states:
        raise ArgumentError(f"state {s} out of range [0, {policy.num_states})")


def _check_action(policy: PolicySpec, a: int) -> None:
    if not 0 <= a < policy.num_actions:
        raise ArgumentError(f"action {a} out of range [0, {policy.num_actions})")


def action_probs(policy: PolicySpec, theta, s: int) -> np.ndarray:
    _check_state(policy, s)
    return action_prob_table(policy, theta)[s]


def step_score_table(policy: PolicySpec, theta) -> np.ndarray:
    """``grad log pi(a|s)`` for every (s, a), shape ``(S, A, dims)``."""
    probs = action_prob_table(policy, theta)
    S, A = probs.shape
    if policy.kind == TABULAR:
        out = np.zeros((S, A, S, A))
        idx = np.arange(S)
        # block s of the gradient: e_a - pi(.|s); other blocks are zero
        out[idx, :, idx, :] = np.eye(A)[None, :, :] - probs[:, None, :]
        return out.reshape(S, A, S * A)
    phi = policy.features
    mean_phi = np.einsum("sa,sad->sd", probs, phi)
    return phi - mean_phi[:, None, :]


def log_prob_grad(policy: PolicySpec, theta, s: int, a: int) -> np.ndarray:
    _check_state(policy, s)
    _check_action(policy, a)
    return step_score_table(policy, theta)[s, a]


def scores(policy: PolicySpec, theta, states, actions) -> np.ndarray:
    """Trajectory scores for index arrays of shape ``(..., T)``.

    Returns an array of shape ``(..., dims)``.
    """
    table = step_score_table(policy, theta)
    states = np.asarray(states)
    actions = np.asarray(actions)
    return table[states, actions].sum(axis=-2)


def score(policy: PolicySpec, theta, traj) -> np.ndarray:
    """Score ``g(theta, tau)``: the sum of per-step log-policy gradients."""
    states = np.asarray(traj.states)
    actions = np.asarray(traj.actions)
    if np.any((states < 0) | (states >= policy.num_states)):
        raise ArgumentError("trajectory visits a state outside the policy's range")
    if np.any((actions < 0) | (actions >= policy.num_actions)):
        raise ArgumentError("trajectory takes an action outside the policy's range")
    return scores(policy, theta, states, actions)
