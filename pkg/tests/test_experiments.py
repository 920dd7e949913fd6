import dataclasses
import math

import numpy as np
import pandas as pd
import pytest

from errors import ConfigError
from experiments import (
    CHECK_SUITES,
    SWEEP_COLUMNS,
    SweepSpec,
    fixed_weight_replay,
    learn_then_replay,
    reference_cost,
    run_check_suite,
    sensitivity_sweep,
    sensitivity_table,
    total_cost,
)
from scenario import default_config
from simulator import Trajectory


def _trajectory(t, s, u):
    frame = pd.DataFrame({"t": t})
    for i, col in enumerate(np.atleast_2d(s).T, start=1):
        frame[f"s{i}"] = col
    for j, col in enumerate(np.atleast_2d(u).T, start=1):
        frame[f"u{j}"] = col
    return Trajectory(frame=frame, seed=0, dt=float(t[1] - t[0]) if len(t) > 1 else 1.0)


def test_total_cost_constant_state():
    t = np.linspace(0.0, 1.0, 11)
    s = np.tile([1.0, 0.0], (11, 1))
    u = np.zeros((11, 1))
    cost = total_cost(_trajectory(t, s, u), np.diag([10.0, 10.0]), np.array([[0.1]]))
    assert cost == pytest.approx(10.0, rel=1e-12)


def test_total_cost_input_term_and_single_sample():
    t = np.linspace(0.0, 2.0, 5)
    s = np.zeros((5, 2))
    u = np.full((5, 1), 2.0)
    # u^T R u = 0.4 over two seconds
    assert total_cost(_trajectory(t, s, u), np.eye(2), np.array([[0.1]])) == pytest.approx(0.8)
    one = _trajectory(np.array([0.0]), np.ones((1, 2)), np.ones((1, 1)))
    assert total_cost(one, np.eye(2), np.eye(1)) == 0.0


def test_zero_weight_replay_applies_no_control(two_state_desk):
    config = dataclasses.replace(two_state_desk, x0=np.array([0.5, -0.5]))
    traj = fixed_weight_replay(config, np.zeros(3))
    assert traj.failure is None
    assert np.allclose(traj.block("u"), 0.0)
    assert (traj.frame["learning"] == 0).all()
    # weights stay at their initial values
    assert np.allclose(traj.block("W_c"), two_state_desk.W_c0)
    cost = total_cost(traj, two_state_desk.Q, two_state_desk.R)
    assert np.isfinite(cost) and cost > 0.0


def test_learn_then_replay_uses_final_critic(two_state_desk):
    learned, replay = learn_then_replay(two_state_desk)
    W_star = learned.final_state.learner.W_c_hat
    expected = fixed_weight_replay(two_state_desk, W_star)
    pd.testing.assert_frame_equal(replay.frame, expected.frame)


def test_sweep_spec_alias_and_bad_parameter(two_state_desk):
    spec = SweepSpec("v", [1, 10], two_state_desk)
    assert spec.parameter == "gamma1"
    assert spec.values == (1.0, 10.0)
    with pytest.raises(ConfigError):
        SweepSpec("mass", (1.0,), two_state_desk)


def test_empty_sweep(two_state_desk):
    table = sensitivity_sweep(SweepSpec("k_c1", (), two_state_desk))
    assert table.empty
    assert list(table.columns) == SWEEP_COLUMNS


def test_sweep_rows_follow_value_order(two_state_desk):
    spec = SweepSpec("k_c2", (10.0, 2.0, 5.0), two_state_desk)
    table = sensitivity_sweep(spec)
    assert list(table.columns) == SWEEP_COLUMNS
    assert table["value"].tolist() == [10.0, 2.0, 5.0]
    assert (table["parameter"] == "k_c2").all()
    assert table["reference_cost"].tolist() == [71.8344, 71.7476, 72.1559]
    assert table["safety_ok"].all()
    assert (table["failure"] == "").all()
    assert np.isfinite(table["cost"]).all()


def test_sweep_is_deterministic_and_parallel_matches(two_state_desk):
    spec = SweepSpec("k_c1", (0.1, 0.3), two_state_desk)
    first = sensitivity_sweep(spec, parallel=1)
    again = sensitivity_sweep(spec, parallel=1)
    pooled = sensitivity_sweep(spec, parallel=2)
    pd.testing.assert_frame_equal(first, again)
    pd.testing.assert_frame_equal(first, pooled)


def test_sweep_rejects_unknown_cost_mode(two_state_desk):
    with pytest.raises(ConfigError):
        sensitivity_sweep(SweepSpec("k_c1", (0.1,), two_state_desk), cost_mode="offline")


def test_sensitivity_table_needs_reference_grid(scalar_config):
    with pytest.raises(ConfigError):
        sensitivity_table(scalar_config)


def test_reference_cost_lookup():
    assert reference_cost("two_state") == 71.8422
    assert reference_cost("robot") == 95.1490
    assert reference_cost("two_state", "v", 50.0) == 79.1540
    assert reference_cost("robot", "beta", 0.9) == 92.91
    assert math.isnan(reference_cost("two_state", "k_c1", 0.7))
    assert math.isnan(reference_cost("counterexample"))


def test_lqr_oracle_suite_passes():
    results = run_check_suite("lqr-oracle")
    assert [r.name for r in results] == ["lqr-oracle[riccati]", "lqr-oracle[decomposition]"]
    for r in results:
        assert r.passed, r
        assert r.residual < r.tolerance


def test_monotone_and_identity_suites_on_desk(two_state_desk):
    for suite in ("monotone-Yf", "fcl-identity"):
        (result,) = run_check_suite(suite, two_state_desk)
        assert result.passed, result


def test_unknown_suite():
    assert "lemma1" in CHECK_SUITES
    with pytest.raises(ConfigError):
        run_check_suite("stability")


@pytest.mark.slow
def test_lemma1_suite_on_nominal_two_state():
    results = run_check_suite("lemma1")
    assert all(r.passed for r in results), results


@pytest.mark.slow
def test_two_state_sweeps_against_reference():
    base = default_config("two_state")
    k_a2 = sensitivity_sweep(SweepSpec("k_a2", (0.0001, 0.001, 0.01), base), parallel=None)
    costs = k_a2["cost"].to_numpy()
    assert np.isfinite(costs).all()
    assert (costs.max() - costs.min()) / costs.min() < 0.01

    values = (0.5, 1.0, 10.0, 50.0, 100.0)
    gamma = sensitivity_sweep(SweepSpec("v", values, base), parallel=None)
    assert gamma["safety_ok"].all() and (gamma["failure"] == "").all()
    costs = gamma["cost"].to_numpy()
    assert (np.diff(costs) >= 0.0).all()
    expected = reference_cost("two_state", "v", 100.0) / reference_cost("two_state", "v", 0.5)
    assert costs[-1] / costs[0] == pytest.approx(expected, rel=0.1)
