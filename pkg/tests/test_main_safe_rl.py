import json

import pandas as pd
import pytest

import config as cfg
import main_safe_rl
from simulator import trajectory_columns

DESK = [
    "--set", "dt=1e-3",
    "--set", "t_final=0.2",
    "--set", "sample_interval=1e-2",
    "--set", "extrap_count=8",
]


def _run(*argv):
    return main_safe_rl.main(list(argv))


def test_simulate_writes_trajectory_and_summary(tmp_path, capsys):
    out = tmp_path / "run"
    code = _run("simulate", "--config", "two_state", "--out", str(out), "--seed", "3", *DESK)
    assert code == 0

    frame = pd.read_csv(out / "trajectory.csv")
    assert list(frame.columns) == trajectory_columns(2, 4, 1, 3)
    assert len(frame) == 21

    summary = json.loads((out / "summary.json").read_text())
    assert summary["plant"] == "two_state"
    assert summary["seed"] == 3
    assert summary["dt"] == 1e-3
    assert summary["safety_ok"] is True
    assert summary["failure"] is None
    assert summary["reference_cost"] == 71.8422
    assert len(summary["W_c_hat"]) == 3
    assert summary["config"]["extrap_count"] == 8
    assert "Total cost" in capsys.readouterr().out


def test_replay_with_weight_list(tmp_path):
    out = tmp_path / "replay"
    assert _run("replay", "--config", "two_state", "--out", str(out), "--weights", "0,0,0", *DESK,
                "--set", "x0=[0.5, -0.5]") == 0
    frame = pd.read_csv(out / "trajectory.csv")
    assert (frame["u1"] == 0.0).all()


def test_replay_reads_summary_weights(tmp_path):
    first = tmp_path / "learn"
    assert _run("simulate", "--config", "two_state", "--out", str(first), *DESK) == 0
    out = tmp_path / "replay"
    weights = str(first / "summary.json")
    assert _run("replay", "--config", "two_state", "--out", str(out), "--weights", weights, *DESK) == 0
    assert (out / "summary.json").exists()


def test_replay_weight_count_mismatch(tmp_path, capsys):
    code = _run("replay", "--config", "two_state", "--out", str(tmp_path), "--weights", "1,2", *DESK)
    assert code == 2
    assert capsys.readouterr().err.startswith("ERROR:")


def test_sweep_writes_table(tmp_path):
    code = _run(
        "sweep", "--config", "two_state", "--out", str(tmp_path),
        "--parameter", "v", "--values", "0.5,1", "--parallel", "1", *DESK,
    )
    assert code == 0
    table = pd.read_csv(tmp_path / "sweep.csv")
    assert table["parameter"].tolist() == ["gamma1", "gamma1"]
    assert table["value"].tolist() == [0.5, 1.0]


def test_sweep_needs_values(tmp_path):
    assert _run("sweep", "--config", "two_state", "--out", str(tmp_path), "--parameter", "k_c1") == 2


def test_check_lqr_oracle(capsys):
    assert _run("check", "lqr-oracle") == 0
    out = capsys.readouterr().out
    assert "PASS lqr-oracle[riccati]" in out
    assert "PASS lqr-oracle[decomposition]" in out


def test_unknown_suite_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        _run("check", "stability")
    assert exc.value.code == 2


def test_missing_config(capsys):
    assert _run("simulate") == 2
    assert "--config is required" in capsys.readouterr().err


def test_initial_state_outside_box(tmp_path, capsys):
    code = _run("simulate", "--config", "two_state", "--out", str(tmp_path), "--set", "x0=[-8.0, 0.0]")
    assert code == 2
    assert "safe box" in capsys.readouterr().err
    assert not (tmp_path / "trajectory.csv").exists()


def test_unknown_scenario_file(tmp_path):
    assert _run("simulate", "--config", str(tmp_path / "nope.yaml")) == 2


def test_runtime_failure_keeps_partial_trajectory(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(cfg, "DIVERGENCE_LIMIT", 1e-6)
    code = _run("simulate", "--config", "two_state", "--out", str(tmp_path), *DESK)
    assert code == 1
    assert "NumericalDivergence" in capsys.readouterr().err
    frame = pd.read_csv(tmp_path / "trajectory.csv")
    assert frame["t"].tolist() == [0.0]
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["failure"] == "NumericalDivergence"
    assert summary["safety_ok"] is True
    assert summary["total_cost"] == 0.0
