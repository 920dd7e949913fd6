#!/usr/bin/env python3
"""
Main entry point for barrier-transformed safe model-based RL runs.

Examples:
  poetry run safe-mbrl simulate --config two_state
  poetry run safe-mbrl simulate --config robot --set dt=1e-3 --out out/robot
  poetry run safe-mbrl sweep --config two_state --parameter v --values 0.5,1,10,50,100
  poetry run safe-mbrl sweep --config robot --parallel 4          # full sensitivity grid
  poetry run safe-mbrl replay --config two_state --weights out/summary.json
  poetry run safe-mbrl check lemma1 --config two_state
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

import config as cfg
from errors import ConfigError, DomainError, SimulationError
from experiments import (
    CHECK_SUITES,
    SweepSpec,
    fixed_weight_replay,
    reference_cost,
    run_check_suite,
    sensitivity_sweep,
    sensitivity_table,
    total_cost,
)
from scenario import SimConfig, apply_overrides, atomic_write_text, load_config
from simulator import Trajectory, run

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _configure_logging(verbosity: int) -> None:
    if verbosity <= 0:
        level = logging.WARNING
    elif verbosity == 1:
        level = logging.INFO
    else:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load(args: argparse.Namespace) -> SimConfig:
    config = load_config(args.config)
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(("seed", args.seed))
    if overrides:
        config = apply_overrides(config, overrides)
    return config


def _parse_values(spec: str) -> List[float]:
    try:
        return [float(v) for v in spec.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values must be a comma-separated list of numbers, got {spec!r}") from None


def _parse_weights(spec: str) -> np.ndarray:
    """Comma list, or a summary.json written by `simulate` (its final critic weights)."""
    path = Path(spec)
    if path.suffix == ".json" or path.exists():
        try:
            with open(path, "r", encoding="utf-8") as fh:
                summary = json.load(fh)
            return np.asarray(summary["W_c_hat"], dtype=float)
        except (OSError, KeyError, ValueError) as e:
            raise ConfigError(f"cannot read weights from {spec}: {e}") from None
    try:
        return np.asarray([float(v) for v in spec.split(",") if v.strip()])
    except ValueError:
        raise ConfigError(f"--weights must be a comma list or a summary.json, got {spec!r}") from None


def _summary(config: SimConfig, traj: Trajectory) -> dict:
    final = traj.final_state
    frame = traj.frame
    after = frame["t"] >= traj.T_detected if traj.T_detected is not None else frame["t"] < 0
    c3 = frame.loc[after, "c3"]
    return {
        "plant": config.plant,
        "seed": config.seed,
        "dt": config.dt,
        "t_final": config.t_final,
        "theta_hat": final.estimator.theta_hat.tolist(),
        "theta_true": config.plant_model().theta_true.tolist(),
        "W_c_hat": final.learner.W_c_hat.tolist(),
        "W_a_hat": final.learner.W_a_hat.tolist(),
        "total_cost": total_cost(traj, config.Q, config.R),
        "reference_cost": reference_cost(config.plant),
        "T_detected": traj.T_detected,
        "freeze_time": traj.freeze_time,
        "c3_min": float(c3.min()) if len(c3) else None,
        "gamma_floor_hits": traj.gamma_floor_hits,
        "safety_ok": traj.safety_ok,
        "failure": traj.failure,
        "config": config.to_mapping(),
    }


def _write_run(out: Path, config: SimConfig, traj: Trajectory) -> dict:
    traj.to_csv(out / "trajectory.csv")
    summary = _finite_or_none(_summary(config, traj))
    text = json.dumps(summary, indent=2, allow_nan=False)
    atomic_write_text(out / "summary.json", text + "\n")
    return summary


def _report_failure(out: Path, config: SimConfig, err: SimulationError) -> int:
    print(f"ERROR: {type(err).__name__} at t={err.t:.6g}: {err}", file=sys.stderr)
    if err.trajectory is not None and err.trajectory.final_state is not None:
        _write_run(out, config, err.trajectory)
        print(f"Partial trajectory written to: {out / 'trajectory.csv'}")
    return EXIT_RUNTIME


def _finite_or_none(summary: dict) -> dict:
    # NaN is not valid JSON
    return {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in summary.items()}


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.6g}"


def cmd_simulate(args: argparse.Namespace, config: SimConfig) -> int:
    out = Path(args.out)
    print(f"Plant: {config.plant}  dt: {config.dt:g}  t_final: {config.t_final:g}  seed: {config.seed}")
    try:
        traj = run(config)
    except SimulationError as err:
        return _report_failure(out, config, err)
    summary = _write_run(out, config, traj)
    print(
        f"Total cost: {_fmt(summary['total_cost'])} (reference {_fmt(summary['reference_cost'])})  "
        f"T_detected: {summary['T_detected']}  safety_ok: {summary['safety_ok']}"
    )
    print(f"theta_hat: {np.round(summary['theta_hat'], 4).tolist()}")
    print(f"Wrote: {out / 'trajectory.csv'}, {out / 'summary.json'}")
    return EXIT_OK


def cmd_replay(args: argparse.Namespace, config: SimConfig) -> int:
    out = Path(args.out)
    if args.weights:
        W_star = _parse_weights(args.weights)
        if W_star.shape != config.W_c0.shape:
            raise ConfigError(f"replay weights have {W_star.size} entries, basis needs {config.W_c0.size}")
    else:
        print("No --weights given: learning first, then replaying the final critic weights.")
        try:
            W_star = run(config).final_state.learner.W_c_hat.copy()
        except SimulationError as err:
            return _report_failure(out, config, err)
    try:
        traj = fixed_weight_replay(config, W_star)
    except SimulationError as err:
        return _report_failure(out, config, err)
    summary = _write_run(out, config, traj)
    print(f"Replay cost: {_fmt(summary['total_cost'])} (reference {_fmt(summary['reference_cost'])})")
    print(f"Wrote: {out / 'trajectory.csv'}, {out / 'summary.json'}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, config: SimConfig) -> int:
    out = Path(args.out)
    parallel = args.parallel if args.parallel is not None else (os.cpu_count() or 1)
    if args.parameter:
        if args.values is None:
            raise ConfigError("--values is required with --parameter")
        spec = SweepSpec(args.parameter, tuple(_parse_values(args.values)), config)
        table = sensitivity_sweep(spec, parallel=parallel, cost_mode=args.cost_mode)
    else:
        table = sensitivity_table(config, parallel=parallel, cost_mode=args.cost_mode)

    float_format = cfg._get_cfg("CSV_FLOAT_FORMAT", "%.17g")
    atomic_write_text(out / "sweep.csv", table.to_csv(index=False, float_format=float_format))
    if not table.empty:
        print(table.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    print(f"Wrote: {out / 'sweep.csv'}")
    failed = table["failure"].astype(bool).any() if not table.empty else False
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_check(args: argparse.Namespace, config: Optional[SimConfig]) -> int:
    results = run_check_suite(args.suite, config)
    ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: residual={r.residual:.3e} tol={r.tolerance:.3e} {r.detail}".rstrip())
        ok = ok and r.passed
    return EXIT_OK if ok else EXIT_RUNTIME


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Scenario YAML path or bundled name (two_state, robot)")
    common.add_argument("--out", default="out", help="Output directory (default: out/)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="Override a scenario key (repeatable), e.g. --set dt=1e-3")
    common.add_argument("--seed", type=int, help="Extrapolation grid seed")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO logs, -vv for DEBUG")

    parser = argparse.ArgumentParser(description="Safe model-based RL with barrier transformation")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="Learning run; writes trajectory.csv and summary.json")

    p_sweep = sub.add_parser("sweep", parents=[common], help="One-at-a-time gain sensitivity sweep")
    p_sweep.add_argument("--parameter", help="Gain to sweep (k_c1, k_c2, k_a1, k_a2, beta, gamma1 or v)")
    p_sweep.add_argument("--values", help="Comma-separated values, e.g. 0.5,1,10")
    p_sweep.add_argument("--parallel", type=int, help="Worker processes (default: CPU count)")
    p_sweep.add_argument("--cost-mode", choices=["learning", "replay"],
                         help="Cost of the learning run or of a fixed-weight replay")

    p_replay = sub.add_parser("replay", parents=[common], help="Fixed-weight closed loop, learning off")
    p_replay.add_argument("--weights", help="Comma list of weights or a summary.json from simulate")

    p_check = sub.add_parser("check", parents=[common], help="Numerical property checks")
    p_check.add_argument("suite", choices=CHECK_SUITES)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)

    if args.command != "check" and not args.config:
        print("ERROR: --config is required (a scenario file or a bundled name).", file=sys.stderr)
        return EXIT_USAGE

    try:
        config = _load(args) if args.config else None
        if args.command == "simulate":
            return cmd_simulate(args, config)
        if args.command == "replay":
            return cmd_replay(args, config)
        if args.command == "sweep":
            return cmd_sweep(args, config)
        return cmd_check(args, config)
    except (ConfigError, DomainError) as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SimulationError as e:
        print(f"ERROR: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
