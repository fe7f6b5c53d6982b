import numpy as np
import pytest

from riskpg import envs, gradients as G, losses as L, mdp as M, oracles as O, policy as pol, risk as R
from riskpg.errors import ArgumentError, RangeError

THETA = np.array([0.2, -0.1])


def _batch(spec, theta, m, seed):
    return M.sample_batch(spec, spec.tabular_policy(), theta, m, np.random.default_rng(seed))


def test_constant_cost_batch_gives_zero_expectile_gradient():
    spec = envs.make_two_arm_bandit(1.0, [(1.0, 1.0)])
    est = G.expectile_policy_gradient(_batch(spec, THETA, 50, 0), 0.7, THETA, spec.tabular_policy(), spec)
    np.testing.assert_allclose(est.gradient, 0.0, atol=1e-12)
    assert est.risk_estimate == 1.0 and not est.used_double_sampling


def test_expectile_denominator_bound(bandit):
    for nu in (0.2, 0.65):
        est = G.expectile_policy_gradient(_batch(bandit, THETA, 200, 1), nu, THETA, bandit.tabular_policy(), bandit)
        assert est.denominator_value >= 200 * min(nu, 1 - nu)


def test_symmetric_bandit_antisymmetric_gradients():
    spec = envs.make_two_arm_bandit(0.0, [(-1.0, 0.5), (1.0, 0.5)])
    P = spec.tabular_policy()
    for risk in (envs.EXPECTILE_AVERSE, R.RiskSpec.expectile(0.5), envs.ENTROPIC):
        g = G.exact_gradient(spec, P, np.zeros(2), risk)
        assert g[0] == pytest.approx(-g[1], abs=1e-12)
    est = G.expectile_policy_gradient(_batch(spec, np.zeros(2), 100, 2), 0.5, np.zeros(2), P, spec)
    assert est.gradient[0] == pytest.approx(-est.gradient[1], abs=1e-12)


def test_identity_ubsr_is_vanilla_gradient(small_mdp, rng):
    P = small_mdp.tabular_policy()
    th = rng.normal(size=P.dims)
    enum = M.enumerate_structure(small_mdp)
    p = enum.probabilities(P, th)
    direct = (p * enum.discounted_costs(small_mdp.gamma)) @ pol.scores(P, th, enum.states, enum.actions)
    np.testing.assert_allclose(G.exact_ubsr_gradient(small_mdp, P, th, L.make_identity(), 0.0), direct, atol=1e-12)
    np.testing.assert_allclose(G.exact_mean_gradient(small_mdp, P, th), direct, atol=1e-12)


@pytest.mark.parametrize("risk", [envs.EXPECTILE_AVERSE, envs.ENTROPIC, envs.QUADRATIC, envs.MEANVAR,
                                  R.RiskSpec.oce(L.make_cvar(0.5))])
def test_exact_gradient_matches_finite_differences(risk, small_mdp, rng):
    P = small_mdp.tabular_policy()
    for _ in range(3):
        th = rng.normal(size=P.dims)
        fd = O.finite_difference_gradient(lambda t: G.exact_risk(small_mdp, P, t, risk), th)
        g = G.exact_gradient(small_mdp, P, th, risk)
        assert np.max(np.abs(g - fd)) <= 1e-4 * (1 + np.max(np.abs(g)))


def test_entropic_closed_form_root(bandit):
    b = _batch(bandit, THETA, 300, 3)
    c = b.discounted_costs(1.0)
    est = G.entropic_policy_gradient(b, 0.5, THETA, bandit.tabular_policy(), bandit)
    assert est.risk_estimate == pytest.approx(2 * np.log(np.mean(np.exp(0.5 * c))), abs=1e-12)


def test_entropic_large_costs_stay_finite():
    # weights are normalised inside the log-sum-exp, so e^{beta c} never overflows
    g = np.array([[[1.0, -1.0], [-1.0, 1.0]]])
    grad, sr, _ = G.entropic_grad_from_arrays(np.array([[0.0, 2000.0]]), g, 1.0)
    assert np.all(np.isfinite(grad)) and sr[0] == pytest.approx(2000 - np.log(2))
    with pytest.raises(RangeError), np.errstate(invalid="ignore"):
        G.entropic_grad_from_arrays(np.array([[0.0, np.inf]]), g, 1.0)


def _mean_and_half(spec, risk, m, reps, seed, **kw):
    s = O.gradient_replications(spec, spec.tabular_policy(), THETA, risk, m, reps,
                                np.random.default_rng(seed), **kw)
    return O.replication_mean_ci(s)


@pytest.mark.parametrize("risk", [envs.QUADRATIC, envs.MEAN, envs.MEANVAR])
def test_double_sampled_estimators_are_consistent(risk, bandit):
    mean, half = _mean_and_half(bandit, risk, 500, 1000, 4)
    exact = G.exact_gradient(bandit, bandit.tabular_policy(), THETA, risk)
    assert np.all(np.abs(mean - exact) <= half)


def test_cross_pairing_has_mean_zero(bandit):
    # weights from one batch and scores from an independent one are
    # uncorrelated, so the literal cross-paired estimator averages to zero
    for risk in (envs.QUADRATIC, envs.MEANVAR):
        mean, half = _mean_and_half(bandit, risk, 200, 2000, 5, pairing="cross")
        exact = G.exact_gradient(bandit, bandit.tabular_policy(), THETA, risk)
        assert np.all(np.abs(mean) <= half)
        assert np.all(np.abs(exact) > 5 * half)


def test_small_beta_entropic_approaches_vanilla(bandit):
    risk = R.RiskSpec.ubsr(L.make_entropic(0.01), 1.0)
    mean, half = _mean_and_half(bandit, risk, 500, 2000, 6)
    vanilla = G.exact_mean_gradient(bandit, bandit.tabular_policy(), THETA)
    assert np.all(np.abs(mean - vanilla) <= half + 0.02 * np.abs(vanilla) + 1e-3)


def test_constant_costs_double_sampled_mean_zero():
    spec = envs.make_two_arm_bandit(1.0, [(1.0, 1.0)])
    loss = L.make_quadratic(0.01)
    risk = R.RiskSpec.ubsr(loss, float(loss.eval(0.0)) + 0.25)
    mean, half = _mean_and_half(spec, risk, 50, 500, 7)
    assert np.all(np.abs(mean) <= half)


def test_hat_permutation_with_constant_weights(bandit):
    # with constant costs the weights are constant, so permuting the hat batch
    # only reorders the summands
    spec = envs.make_two_arm_bandit(2.0, [(2.0, 1.0)])
    P = spec.tabular_policy()
    z, zh = _batch(spec, THETA, 40, 8), _batch(spec, THETA, 40, 9)
    perm = np.random.default_rng(0).permutation(40)
    a = G.oce_policy_gradient(z, zh, L.make_mean_variance(2.0), THETA, P, spec)
    b = G.oce_policy_gradient(z, M.TrajectoryBatch(
        zh.states[perm], zh.actions[perm], zh.costs[perm], zh.terminal[perm]),
        L.make_mean_variance(2.0), THETA, P, spec)
    np.testing.assert_allclose(a.gradient, b.gradient, atol=1e-12)
    assert a.used_double_sampling


def test_ubsr_size_mismatch(bandit):
    P = bandit.tabular_policy()
    with pytest.raises(ArgumentError):
        G.ubsr_policy_gradient(_batch(bandit, THETA, 10, 0), _batch(bandit, THETA, 11, 1),
                               L.make_quadratic(0.01), 0.5, THETA, P, bandit)


def test_double_sampled_requires_hat(bandit):
    with pytest.raises(ArgumentError):
        G.policy_gradient(envs.MEANVAR, _batch(bandit, THETA, 10, 0), THETA, bandit.tabular_policy(), bandit)


def test_ubsr_denominator_positive(bandit):
    est = G.ubsr_policy_gradient(_batch(bandit, THETA, 100, 0), _batch(bandit, THETA, 100, 1),
                                 L.make_quadratic(0.01), 0.5, THETA, bandit.tabular_policy(), bandit)
    assert est.denominator_value >= 100 * 0.01
    assert est.diagnostics["used_double_sampling"]


def test_empty_batch():
    with pytest.raises(ArgumentError):
        G.expectile_grad_from_arrays(np.zeros(0), np.zeros((0, 2)), 0.5)


def test_feature_policy_gradient_shape(feature_mdp, rng):
    P = feature_mdp.feature_policy()
    th = rng.normal(size=P.dims)
    b = M.sample_batch(feature_mdp, P, th, 30, rng)
    assert G.policy_gradient(envs.EXPECTILE_AVERSE, b, th, P, feature_mdp).gradient.shape == (3,)
