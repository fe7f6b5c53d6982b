import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from riskpg import envs, mdp as M, policy as pol
from riskpg.errors import ArgumentError, ConfigurationError

finite = st.floats(-5, 5, allow_nan=False)


def test_uniform_probs():
    P = pol.PolicySpec.tabular(1, 2)
    np.testing.assert_allclose(pol.action_probs(P, np.zeros(2), 0), [0.5, 0.5])


def test_log3_probs():
    P = pol.PolicySpec.tabular(1, 2)
    np.testing.assert_allclose(pol.action_probs(P, [math.log(3), 0.0], 0), [0.75, 0.25])


@given(arrays(float, 3, elements=finite), finite)
def test_shift_invariance(x, c):
    P = pol.PolicySpec.tabular(1, 3)
    np.testing.assert_allclose(pol.action_probs(P, x + c, 0), pol.action_probs(P, x, 0), atol=1e-12)


def test_large_logits_do_not_overflow():
    P = pol.PolicySpec.tabular(1, 2)
    p = pol.action_probs(P, [1000.0, 0.0], 0)
    assert np.all(np.isfinite(p)) and p[0] == 1.0


def test_log_prob_grad_uniform():
    P = pol.PolicySpec.tabular(2, 2)
    g = pol.log_prob_grad(P, np.zeros(4), 1, 0)
    np.testing.assert_allclose(g, [0, 0, 0.5, -0.5])


@given(arrays(float, 6, elements=finite), st.integers(0, 2))
def test_score_identity(theta, s):
    P = pol.PolicySpec.tabular(3, 2)
    probs = pol.action_probs(P, theta, s)
    total = sum(probs[b] * pol.log_prob_grad(P, theta, s, b) for b in range(2))
    np.testing.assert_allclose(total, 0, atol=1e-10)


def _fd_check(P, rng, n=100):
    for _ in range(n):
        th = rng.normal(size=P.dims)
        s, a = rng.integers(P.num_states), rng.integers(P.num_actions)
        fd = np.empty(P.dims)
        for i in range(P.dims):
            e = np.zeros(P.dims)
            e[i] = 1e-6
            fd[i] = (math.log(pol.action_probs(P, th + e, s)[a])
                     - math.log(pol.action_probs(P, th - e, s)[a])) / 2e-6
        np.testing.assert_allclose(pol.log_prob_grad(P, th, s, a), fd, atol=1e-5)


def test_log_prob_grad_finite_difference_tabular(rng):
    _fd_check(pol.PolicySpec.tabular(3, 3), rng)


def test_log_prob_grad_finite_difference_features(rng):
    _fd_check(pol.PolicySpec.from_features(rng.normal(size=(3, 2, 4))), rng)


def test_score_single_step_equals_log_prob_grad(bandit):
    P = bandit.tabular_policy()
    th = np.array([0.3, -0.4])
    traj = M.Trajectory(((0, 1, 2.5),), 0)
    np.testing.assert_allclose(pol.score(P, th, traj), pol.log_prob_grad(P, th, 0, 1))


def test_score_repeated_step():
    P = pol.PolicySpec.tabular(1, 2)
    traj = M.Trajectory(((0, 0, 1.0),) * 3, 0)
    np.testing.assert_allclose(pol.score(P, np.zeros(2), traj), 3 * pol.log_prob_grad(P, np.zeros(2), 0, 0))


@pytest.mark.parametrize("name", ["random_small", "random_features", "risky_chain"])
def test_score_has_zero_mean(name, rng):
    spec = envs.get_entry(name).build()
    for P in [spec.tabular_policy()] + ([spec.feature_policy()] if spec.features is not None else []):
        for _ in range(5):
            th = rng.normal(size=P.dims)
            enum = M.enumerate_structure(spec)
            g = pol.scores(P, th, enum.states, enum.actions)
            np.testing.assert_allclose(enum.probabilities(P, th) @ g, 0, atol=1e-9)


def test_tabular_score_bound(small_mdp, rng):
    P = small_mdp.tabular_policy()
    T = small_mdp.horizon
    for _ in range(20):
        th = 3 * rng.normal(size=P.dims)
        b = M.sample_batch(small_mdp, P, th, 200, rng)
        g = pol.scores(P, th, b.states, b.actions)
        assert np.all(np.linalg.norm(g, axis=1) <= T * math.sqrt(2) + 1e-12)


def test_score_lipschitz_ratio_is_finite(small_mdp, rng):
    # the constant is reported, not compared against anything
    P = small_mdp.tabular_policy()
    b = M.sample_batch(small_mdp, P, np.zeros(P.dims), 50, rng)
    ratios = []
    for _ in range(50):
        t1 = rng.normal(size=P.dims)
        t2 = t1 + 1e-3 * rng.normal(size=P.dims)
        d = pol.scores(P, t1, b.states, b.actions) - pol.scores(P, t2, b.states, b.actions)
        ratios.append(np.max(np.linalg.norm(d, axis=1)) / np.linalg.norm(t1 - t2))
    print(f"empirical score Lipschitz ratio: {max(ratios):.3f}")
    assert max(ratios) < small_mdp.horizon * 2


def test_feature_softmax_matches_tabular_with_one_hot():
    phi = np.eye(4).reshape(2, 2, 4)
    F, T = pol.PolicySpec.from_features(phi), pol.PolicySpec.tabular(2, 2)
    th = np.array([0.1, -0.7, 1.2, 0.3])
    np.testing.assert_allclose(pol.action_prob_table(F, th), pol.action_prob_table(T, th))
    np.testing.assert_allclose(pol.step_score_table(F, th), pol.step_score_table(T, th))


def test_invalid_inputs():
    P = pol.PolicySpec.tabular(2, 2)
    with pytest.raises(ConfigurationError):
        pol.check_params(P, np.zeros(3))
    with pytest.raises(ConfigurationError):
        pol.check_params(P, [0, np.nan, 0, 0])
    with pytest.raises(ArgumentError):
        pol.action_probs(P, np.zeros(4), 5)
    with pytest.raises(ConfigurationError):
        pol.PolicySpec.from_features(np.zeros((2, 2)))
