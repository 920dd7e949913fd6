import dataclasses
import math

import numpy as np
import pytest

import config as cfg
from barrier import bt_forward, bt_inverse
from errors import NumericalDivergence, SafetyViolation, SimulationError
from scenario import default_config
from experiments import fixed_weight_replay, reference_cost, total_cost
from simulator import ClosedLoop, lemma1_check, rk4, run, trajectory_columns


def zero_policy(s, t):
    return np.zeros(1)


def test_rk4_linear_decay():
    z = np.array([1.0])
    dt = 1e-3
    for k in range(1000):
        z = rk4(lambda t, v: -v, k * dt, z, dt)
    assert z[0] == pytest.approx(math.exp(-1.0), abs=1e-8)


def test_closed_loop_linear_decay(scalar_config, decay_plant):
    # s' = -s with u = 0, s(0) = 1
    x0 = bt_inverse(np.array([1.0]), decay_plant.box)
    config = dataclasses.replace(scalar_config, x0=x0)
    traj = run(config, plant=decay_plant, policy=zero_policy, learning=False)
    s = traj.block("s")[:, 0]
    assert traj.t[-1] == pytest.approx(1.0)
    assert s[0] == pytest.approx(1.0, abs=1e-14)
    assert s[-1] == pytest.approx(math.exp(-1.0), abs=1e-8)
    assert not traj.block("u").any()


def test_zero_dynamics_keep_state_constant(scalar_config, still_plant):
    config = dataclasses.replace(scalar_config, x0=np.array([0.7]))
    traj = run(config, plant=still_plant, policy=zero_policy, learning=False)
    s = traj.block("s")[:, 0]
    assert (s == s[0]).all()
    report = lemma1_check(config, policy=zero_policy, plant=still_plant)
    assert report.max_deviation < 1e-14
    assert report.transformed_failure is None and report.original_failure is None


def test_trajectory_layout_and_first_row(two_state_desk):
    traj = run(two_state_desk)
    frame = traj.frame
    assert list(frame.columns) == trajectory_columns(2, 4, 1, 3)
    assert frame["t"].iloc[0] == 0.0
    assert (np.diff(frame["t"].to_numpy()) > 0).all()
    assert traj.block("x")[0].tolist() == two_state_desk.x0.tolist()
    assert traj.block("s")[0] == pytest.approx(bt_forward(two_state_desk.x0, two_state_desk.safe_box()))
    assert traj.block("theta_hat")[0].tolist() == [0.0, 0.0, 0.0, 0.0]
    assert traj.block("W_c")[0].tolist() == [0.5, 0.5, 0.5]
    assert len(frame) == 31
    assert traj.failure is None and traj.safety_ok


def test_two_state_desk_run_properties(two_state_desk):
    traj = run(two_state_desk)
    frame = traj.frame
    box = two_state_desk.safe_box()
    x = traj.block("x")
    assert ((x > box.a) & (x < box.A)).all()

    lam = frame["lambda_min_Yf"].to_numpy()
    assert (np.diff(lam) >= -1e-12 * max(1.0, np.abs(lam).max())).all()
    norms = frame["Yf_norm"].to_numpy()
    assert (np.diff(norms) >= -1e-12 * norms.max()).all()
    assert (frame["identity_residual"] <= 1e-8 * (1.0 + frame["Yf_norm"])).all()
    assert (frame["gamma_min"] > 0).all()
    V1 = frame["V1"].to_numpy()
    assert (np.diff(V1) <= 1e-9 * V1.max()).all()

    # learner weights are held until the excitation time
    W_c = traj.block("W_c")
    W_a = traj.block("W_a")
    T = traj.T_detected if traj.T_detected is not None else np.inf
    held = frame["t"].to_numpy() <= T
    assert (W_c[held] == 0.5).all() and (W_a[held] == 0.5).all()
    assert (frame.loc[held, "learning"] == 0).sum() >= held.sum() - 1


def test_excitation_is_detected_early_on_desk_runs(two_state_desk, robot_desk):
    for config in (two_state_desk, robot_desk):
        traj = run(config)
        assert traj.T_detected is not None and traj.T_detected < 1e-2
        after = traj.frame["t"] >= traj.T_detected
        assert (traj.frame.loc[after, "c3"] > 0).all()


def test_parameter_estimate_improves_on_desk_run(two_state_desk):
    traj = run(two_state_desk)
    theta_hat = traj.block("theta_hat")
    assert np.isfinite(theta_hat).all()
    V1 = traj.frame["V1"].to_numpy()
    assert V1[-1] < V1[0]


def test_gain_matrix_stays_symmetric_along_a_run(two_state_desk):
    loop = ClosedLoop.from_config(two_state_desk)
    c = two_state_desk
    state = loop.initial_state(c.x0, c.theta_hat0, c.W_c0, c.W_a0, c.Gamma0)
    for k in range(1, 201):
        state = loop.step(state, c.dt, t_next=k * c.dt)
        Gamma = state.learner.Gamma
        assert np.linalg.norm(Gamma - Gamma.T) < 1e-9
        assert np.linalg.eigvalsh(Gamma)[0] > 0
    assert state.T_detected is not None


def test_robot_desk_run_is_safe(robot_desk):
    traj = run(robot_desk)
    box = robot_desk.safe_box()
    x = traj.block("x")
    assert ((x > box.a) & (x < box.A)).all()
    assert (traj.frame["identity_residual"] <= 1e-8 * (1.0 + traj.frame["Yf_norm"])).all()


def test_identical_runs_write_identical_csv(two_state_desk, tmp_path):
    a = run(two_state_desk).to_csv(tmp_path / "a" / "trajectory.csv")
    b = run(two_state_desk).to_csv(tmp_path / "b" / "trajectory.csv")
    assert a.read_bytes() == b.read_bytes()
    assert not [p for p in (tmp_path / "a").iterdir() if p.name.endswith(".tmp")]


def test_rk4_order_on_two_state_replay(make_desk):
    config = make_desk(default_config("two_state"), t_final=1.0, sample_interval=0.1)
    W = config.W_a0

    def terminal(dt):
        c = dataclasses.replace(config, dt=dt)
        return run(c, learning=False, actor_weights=W).block("s")[-1]

    ref = terminal(2.5e-4)
    e_coarse = np.linalg.norm(terminal(2e-3) - ref)
    e_fine = np.linalg.norm(terminal(1e-3) - ref)
    assert math.log2(e_coarse / e_fine) >= 3.5


def test_replay_with_zero_weights_is_open_loop(two_state_desk):
    # the uncontrolled plant escapes quickly from the nominal corner start
    config = dataclasses.replace(two_state_desk, x0=np.array([0.5, -0.5]))
    traj = run(config, learning=False, actor_weights=np.zeros(3))
    assert traj.failure is None
    assert not traj.block("u").any()
    assert (traj.frame["learning"] == 0).all()


def test_zero_fallback_before_excitation(two_state_desk):
    config = dataclasses.replace(two_state_desk, fallback="zero")
    traj = run(config)
    frame = traj.frame
    assert traj.failure is None and traj.T_detected is not None
    before = frame["t"].to_numpy() < traj.T_detected
    assert before.any()
    assert (traj.block("u")[before] == 0.0).all()
    assert traj.block("u")[~before].any()


def test_lemma1_two_state_desk(two_state_desk):
    report = lemma1_check(two_state_desk)
    assert report.transformed_failure is None and report.original_failure is None
    assert report.samples == 31
    # RK4 error scales with dt^4; 1e-6 is the bound at dt = 1e-4
    assert report.max_deviation < 1e-6 * (two_state_desk.dt / 1e-4) ** 4


def test_counterexample_escapes_in_both_coordinates():
    config = default_config("counterexample")
    box = config.safe_box()

    def zeta(s, t):
        return -bt_inverse(s, box)

    with pytest.raises(SafetyViolation) as info:
        run(config, policy=zeta, coordinates="original")
    partial = info.value.trajectory
    assert partial is not None and partial.failure == "SafetyViolation"
    assert ((partial.block("x") > -0.5) & (partial.block("x") < 0.5)).all()

    with pytest.raises(SimulationError) as info:
        run(config, policy=zeta)
    assert info.value.t < config.t_final

    report = lemma1_check(config, policy=zeta)
    assert report.transformed_failure is not None and report.original_failure is not None


def test_divergence_guard_attaches_partial_trajectory(two_state_desk, monkeypatch):
    monkeypatch.setattr(cfg, "DIVERGENCE_LIMIT", 1e-6)
    with pytest.raises(NumericalDivergence) as info:
        run(two_state_desk)
    assert info.value.trajectory is not None
    assert len(info.value.trajectory.frame) == 1
    assert info.value.t == 0.0


def test_closed_loop_rejects_unknown_coordinates(two_state_desk):
    with pytest.raises(ValueError):
        ClosedLoop.from_config(two_state_desk, coordinates="polar")


# ---------------------------------------------------------------------------
# Benchmark-scale runs
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def two_state_run():
    return run(default_config("two_state"))


@pytest.fixture(scope="module")
def robot_run():
    return run(default_config("robot"))


@pytest.mark.slow
def test_two_state_benchmark(two_state_run):
    config = default_config("two_state")
    traj = two_state_run
    frame = traj.frame
    box = config.safe_box()
    x = traj.block("x")
    assert traj.failure is None
    assert ((x > box.a) & (x < box.A)).all()
    assert np.max(np.abs(traj.block("theta_hat")[-1] - [1.0, -1.0, -0.5, 0.5])) < 1e-2
    assert traj.T_detected is not None and traj.T_detected < 1e-2
    after = frame["t"] >= traj.T_detected
    assert (frame.loc[after, "c3"] > 0).all()
    assert (frame["identity_residual"] <= 1e-6 * (1.0 + frame["Yf_norm"])).all()
    lam = frame["lambda_min_Yf"].to_numpy()
    assert (np.diff(lam) >= -1e-12 * max(1.0, np.abs(lam).max())).all()
    Gamma = traj.final_state.learner.Gamma
    assert np.linalg.norm(Gamma - Gamma.T) < 1e-9


@pytest.mark.slow
def test_two_state_cost_near_reference(two_state_run):
    config = default_config("two_state")
    cost = total_cost(two_state_run, config.Q, config.R)
    assert np.isfinite(cost)
    assert cost == pytest.approx(reference_cost("two_state"), rel=0.25)


@pytest.mark.slow
def test_two_state_actor_follows_critic(two_state_run):
    W_c = two_state_run.final_state.learner.W_c_hat
    W_a = two_state_run.final_state.learner.W_a_hat
    assert np.linalg.norm(W_a - W_c) < 0.1 * np.linalg.norm(W_c)


@pytest.mark.slow
def test_two_state_state_settles(two_state_run):
    s = np.linalg.norm(two_state_run.block("s"), axis=1)
    t = two_state_run.t
    early = s[np.searchsorted(t, 0.1 * t[-1])]
    assert s[-1] < early
    assert s[-1] < 0.05


@pytest.mark.slow
def test_robot_benchmark(robot_run):
    config = default_config("robot")
    traj = robot_run
    box = config.safe_box()
    x = traj.block("x")
    assert traj.failure is None
    assert ((x > box.a) & (x < box.A)).all()
    assert traj.block("theta_hat")[-1] == pytest.approx([5.3, 1.1, 8.45, 2.35], abs=0.1)
    assert traj.T_detected is not None and traj.T_detected < 1e-2
    frame = traj.frame
    assert (frame["identity_residual"] <= 1e-6 * (1.0 + frame["Yf_norm"])).all()
    W_c = traj.final_state.learner.W_c_hat
    W_a = traj.final_state.learner.W_a_hat
    assert np.linalg.norm(W_a - W_c) < 0.1 * np.linalg.norm(W_c)
    s = np.linalg.norm(traj.block("s"), axis=1)
    assert s[-1] < s[np.searchsorted(traj.t, 0.1 * traj.t[-1])]


@pytest.mark.slow
def test_robot_replay_cost_near_reference(robot_run):
    config = default_config("robot")
    replay = fixed_weight_replay(config, robot_run.final_state.learner.W_c_hat)
    assert replay.failure is None and replay.safety_ok
    cost = total_cost(replay, config.Q, config.R)
    assert np.isfinite(cost)
    assert cost == pytest.approx(reference_cost("robot"), rel=0.25)


@pytest.mark.slow
def test_lemma1_two_state_benchmark(two_state_config):
    report = lemma1_check(two_state_config)
    assert report.transformed_failure is None and report.original_failure is None
    assert report.max_deviation < 1e-6
