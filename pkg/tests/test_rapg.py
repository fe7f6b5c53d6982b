import logging
import math

import numpy as np
import pytest

from riskpg import envs, gradients as G, rapg
from riskpg.errors import ConfigurationError, EstimatorError, InfeasibleThresholdError


def zero_estimator(theta, m, rng):
    return np.zeros_like(theta)


def test_zero_stub_keeps_theta(bandit):
    th0 = np.array([0.3, -0.2])
    rec = rapg.run_rapg(bandit, bandit.tabular_policy(), th0, rapg.RapgConfig(20, envs.EXPECTILE_AVERSE, 0),
                        estimator=zero_estimator)
    assert len(rec.iterates) == 21
    assert all(np.array_equal(t, th0) for t in rec.iterates)
    assert np.array_equal(rapg.select_uniform_iterate(rec), th0)


def test_single_iteration(bandit):
    rec = rapg.run_rapg(bandit, bandit.tabular_policy(), np.zeros(2),
                        rapg.RapgConfig(1, envs.EXPECTILE_AVERSE, 3, batch_size=20))
    assert rec.selected_index == 1
    assert len(rec.iterates) == 2 and len(rec.grad_norm_sq) == 1 == len(rec.risk_estimates)
    assert np.array_equal(rapg.select_uniform_iterate(rec), rec.iterates[1])
    assert not np.array_equal(rec.iterates[1], rec.iterates[0])


def test_default_schedules():
    cfg = rapg.RapgConfig(10_000, envs.EXPECTILE_AVERSE, 0)
    assert cfg.eta(1) == cfg.eta(500) == 0.01
    assert cfg.m(1) == 100
    assert rapg.RapgConfig(10, envs.EXPECTILE_AVERSE, 0).m(3) == math.ceil(math.sqrt(10))


def test_callable_schedules(bandit):
    cfg = rapg.RapgConfig(5, envs.EXPECTILE_AVERSE, 0, step_size=lambda i: 0.1 / i, batch_size=lambda i: 2 * i)
    rec = rapg.run_rapg(bandit, bandit.tabular_policy(), np.zeros(2), cfg)
    assert rec.total_trajectories == 2 + 4 + 6 + 8 + 10


@pytest.mark.parametrize("kw", [dict(num_iterations=0), dict(step_size=0.0), dict(batch_size=0),
                                dict(projection_box=(1.0, -1.0))])
def test_config_validation(kw):
    base = dict(num_iterations=5, risk=envs.EXPECTILE_AVERSE, seed=0)
    base.update(kw)
    with pytest.raises(ConfigurationError):
        rapg.RapgConfig(**base)


def test_reproducible(small_mdp):
    P = small_mdp.tabular_policy()
    cfg = rapg.RapgConfig(30, envs.MEANVAR, 11)
    a = rapg.run_rapg(small_mdp, P, np.zeros(P.dims), cfg).to_dict()
    b = rapg.run_rapg(small_mdp, P, np.zeros(P.dims), cfg).to_dict()
    a.pop("wall_time"), b.pop("wall_time")
    assert a == b


def test_double_sampled_count(bandit):
    cfg = rapg.RapgConfig(4, envs.QUADRATIC, 0, batch_size=7)
    rec = rapg.run_rapg(bandit, bandit.tabular_policy(), np.zeros(2), cfg)
    assert rec.total_trajectories == 4 * 2 * 7
    rec = rapg.run_rapg(bandit, bandit.tabular_policy(), np.zeros(2), rapg.RapgConfig(4, envs.ENTROPIC, 0, batch_size=7))
    assert rec.total_trajectories == 4 * 7


def test_projection_box(bandit):
    cfg = rapg.RapgConfig(200, envs.EXPECTILE_AVERSE, 1, step_size=5.0, projection_box=(-0.5, 0.5))
    rec = rapg.run_rapg(bandit, bandit.tabular_policy(), np.array([3.0, -3.0]), cfg)
    assert all(np.all((t >= -0.5) & (t <= 0.5)) for t in rec.iterates)


def test_descent_with_exact_gradient(small_mdp):
    P = small_mdp.tabular_policy()
    for risk in (envs.EXPECTILE_AVERSE, envs.ENTROPIC, envs.MEANVAR):
        cfg = rapg.RapgConfig(40, risk, 0, step_size=0.05, batch_size=1)
        rec = rapg.run_rapg(small_mdp, P, np.zeros(P.dims), cfg,
                            estimator=rapg.exact_estimator(small_mdp, P, risk))
        h = [G.exact_risk(small_mdp, P, t, risk) for t in rec.iterates]
        assert np.all(np.diff(h) <= 1e-9)


def test_estimator_errors_carry_iteration(bandit):
    calls = []

    def failing(theta, m, rng):
        calls.append(1)
        if len(calls) == 3:
            raise InfeasibleThresholdError("boom")
        return np.zeros(2)

    with pytest.raises(EstimatorError) as info:
        rapg.run_rapg(bandit, bandit.tabular_policy(), np.zeros(2), rapg.RapgConfig(5, envs.EXPECTILE_AVERSE, 0),
                      estimator=failing)
    assert info.value.iteration == 3


def test_non_finite_gradient_aborts_with_record(bandit):
    def bad(theta, m, rng):
        return np.array([np.nan, 0.0])

    with pytest.raises(rapg.RunAborted) as info:
        rapg.run_rapg(bandit, bandit.tabular_policy(), np.zeros(2), rapg.RapgConfig(5, envs.EXPECTILE_AVERSE, 0),
                      estimator=bad)
    rec = info.value.record
    assert rec.status == "aborted" and info.value.iteration == 1 and len(rec.iterates) == 1


def test_large_theta_warning(bandit, caplog):
    with caplog.at_level(logging.WARNING, logger="riskpg.rapg"):
        rapg.run_rapg(bandit, bandit.tabular_policy(), np.zeros(2),
                      rapg.RapgConfig(3, envs.EXPECTILE_AVERSE, 0, step_size=1.0),
                      estimator=lambda th, m, rng: np.array([-30.0, 0.0]))
    assert any("exceeds" in r.message for r in caplog.records)


def test_uniform_redraws(bandit):
    rec = rapg.run_rapg(bandit, bandit.tabular_policy(), np.zeros(2), rapg.RapgConfig(5, envs.EXPECTILE_AVERSE, 0),
                        estimator=lambda th, m, rng: np.array([1.0, 0.0]))
    # the first coordinate identifies the iterate
    lookup = {t[0]: i for i, t in enumerate(rec.iterates)}
    rng = np.random.default_rng(0)
    n = 10_000
    counts = np.zeros(6)
    for _ in range(n):
        counts[lookup[rapg.select_uniform_iterate(rec, rng)[0]]] += 1
    assert counts[0] == 0
    sd = math.sqrt(n * 0.2 * 0.8)
    assert np.all(np.abs(counts[1:] - n / 5) <= 4 * sd)
    again = [rapg.select_uniform_iterate(rec, np.random.default_rng(5))[0] for _ in range(3)]
    assert len(set(again)) == 1


def test_stationarity_zero_stub(bandit):
    th0 = np.array([0.4, -0.3])
    cfg = rapg.RapgConfig(1, envs.EXPECTILE_AVERSE, 0)
    rep = rapg.stationarity_report(bandit, bandit.tabular_policy(), cfg, 3, (10, 20), th0, zero_estimator)
    g = G.exact_gradient(bandit, bandit.tabular_policy(), th0, envs.EXPECTILE_AVERSE)
    for p in rep.points:
        assert p.grad_norm_sq == [float(g @ g)] * 3


def test_stationarity_decreases_on_single_state_problem(bandit):
    # noise-free descent: the mean over seeds only varies through R
    P = bandit.tabular_policy()
    cfg = rapg.RapgConfig(1, envs.ENTROPIC, 0)
    rep = rapg.stationarity_report(bandit, P, cfg, 3, (25, 100, 400), None,
                                   rapg.exact_estimator(bandit, P, envs.ENTROPIC))
    means = [p.mean for p in rep.points]
    assert means[0] > means[1] > means[2]
    assert rep.slope < 0


def test_stationarity_iterate_average_matches_manual(bandit):
    P = bandit.tabular_policy()
    cfg = rapg.RapgConfig(1, envs.ENTROPIC, 5)
    rep = rapg.stationarity_report(bandit, P, cfg, 2, (10,), None, over_iterates=True)
    rec = rapg.run_rapg(bandit, P, np.zeros(P.dims), rapg.RapgConfig(10, envs.ENTROPIC, 5))
    norms = [G.exact_gradient(bandit, P, t, envs.ENTROPIC) for t in rec.iterates[1:]]
    assert rep.points[0].iterate_average[0] == pytest.approx(np.mean([g @ g for g in norms]))
    assert rep.iterate_average_decay_factor == pytest.approx(1.0)


def test_stationarity_iterate_average_absent_by_default(bandit):
    cfg = rapg.RapgConfig(1, envs.ENTROPIC, 0)
    rep = rapg.stationarity_report(bandit, bandit.tabular_policy(), cfg, 2, (5, 10))
    assert rep.points[0].iterate_average is None
    assert rep.iterate_average_decay_factor is None and rep.iterate_average_slope is None
