# simulator.py
"""
Closed-loop integration of the augmented system

    z = [s (or x), vec(Y), vec(Y_f), G_f, X_f, theta_hat, W_c, vec(Gamma), W_a, J]

with a classic fixed-step RK4 scheme, except theta_hat, which takes an exact
step once the filters have advanced. The filter freeze and the learning start
are switching decisions taken once per step, after the advance, so within a
step the vector field is smooth.

The plant block is integrated with theta_true; everything on the learner side
only sees theta_hat.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Union

import numpy as np
import pandas as pd

import config as cfg
from actor_critic import (
    BasisSet,
    BellmanPoints,
    LearnerGains,
    LearnerState,
    _inverse_R,
    assumption3_estimate,
    control_command,
    learner_derivative,
    make_extrapolation_grid,
    repair_gamma,
)
from barrier import bt_forward, bt_inverse
from errors import DomainError, NumericalDivergence, SafetyViolation, SimulationError
from fcl_estimator import (
    EstimatorState,
    advance_theta_hat,
    check_freeze,
    estimator_derivative,
    excitation_monitor,
    identity_residual,
    parameter_lyapunov,
)
from plant import PlantModel, TransformedModel
from scenario import SimConfig, atomic_write_text, step_counts

__all__ = [
    "AugmentedState",
    "ClosedLoop",
    "Trajectory",
    "Lemma1Report",
    "rk4",
    "run",
    "lemma1_check",
    "trajectory_columns",
]

logger = logging.getLogger(__name__)

Policy = Callable[[np.ndarray, float], np.ndarray]
COORDINATES = ("transformed", "original")


def rk4(f: Callable[[float, np.ndarray], np.ndarray], t: float, z: np.ndarray, dt: float) -> np.ndarray:
    """One classic fourth-order Runge-Kutta step of z' = f(t, z)."""
    half = 0.5 * dt
    k1 = f(t, z)
    k2 = f(t + half, z + half * k1)
    k3 = f(t + half, z + half * k2)
    k4 = f(t + dt, z + dt * k3)
    return z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass
class AugmentedState:
    t: float
    s: np.ndarray
    x: np.ndarray
    estimator: EstimatorState
    learner: LearnerState
    cost: float = 0.0
    T_detected: Optional[float] = None
    freeze_time: Optional[float] = None


class _Layout:
    """Slices of the packed state vector."""

    def __init__(self, n: int, p: int, L: int) -> None:
        self.n, self.p, self.L = n, p, L
        self.shapes = {
            "plant": (n,),
            "Y": (n, p),
            "Y_f": (p, p),
            "G_f": (n,),
            "X_f": (p,),
            "theta_hat": (p,),
            "W_c": (L,),
            "Gamma": (L, L),
            "W_a": (L,),
            "J": (),
        }
        self.slices: dict[str, slice] = {}
        start = 0
        for name, shape in self.shapes.items():
            size = int(np.prod(shape)) if shape else 1
            self.slices[name] = slice(start, start + size)
            start += size
        self.size = start

    def views(self, z: np.ndarray) -> dict[str, np.ndarray]:
        return {name: z[sl].reshape(self.shapes[name]) for name, sl in self.slices.items()}


def trajectory_columns(n: int, p: int, q: int, L: int) -> list[str]:
    """Fixed column order of trajectory tables."""
    cols = ["t"]
    cols += [f"x{i + 1}" for i in range(n)]
    cols += [f"s{i + 1}" for i in range(n)]
    cols += [f"u{i + 1}" for i in range(q)]
    cols += [f"theta_hat{i + 1}" for i in range(p)]
    cols += [f"W_c{i + 1}" for i in range(L)]
    cols += [f"W_a{i + 1}" for i in range(L)]
    cols += [
        "delta",
        "lambda_min_Yf",
        "Yf_norm",
        "c3",
        "gamma_min",
        "gamma_max",
        "actor_critic_gap",
        "identity_residual",
        "V1",
        "running_cost",
        "cost",
        "frozen",
        "learning",
    ]
    return cols


@dataclass
class Trajectory:
    """
    Uniformly sampled closed-loop records plus run metadata.

    `failure` is the exception class name when the run stopped early; the
    frame then holds the samples accepted up to `failure_time`.
    """

    frame: pd.DataFrame
    seed: int
    dt: float
    T_detected: Optional[float] = None
    freeze_time: Optional[float] = None
    gamma_floor_hits: int = 0
    failure: Optional[str] = None
    failure_time: Optional[float] = None
    final_state: Optional[AugmentedState] = field(default=None, repr=False)

    @property
    def t(self) -> np.ndarray:
        return self.frame["t"].to_numpy()

    def block(self, prefix: str) -> np.ndarray:
        """Columns `<prefix>1..k` as a (samples, k) array."""
        cols = [c for c in self.frame.columns if c.startswith(prefix) and c[len(prefix):].isdigit()]
        cols.sort(key=lambda c: int(c[len(prefix):]))
        return self.frame[cols].to_numpy()

    @property
    def safety_ok(self) -> bool:
        return self.failure != SafetyViolation.__name__

    def to_csv(self, path: Union[str, Path]) -> Path:
        text = self.frame.to_csv(index=False, float_format=cfg._get_cfg("CSV_FLOAT_FORMAT", "%.17g"))
        return atomic_write_text(path, text)


class ClosedLoop:
    """
    The augmented closed-loop vector field and its RK4 stepper.

    Parameters
    ----------
    model : TransformedModel
        Plant and safe box.
    basis : BasisSet
        Value/policy basis.
    Q, R : ndarray
        State and input penalties.
    gains : LearnerGains
    beta1 : ndarray
        Estimator gain.
    extrap_points : ndarray
        (N, n) Bellman error extrapolation states.
    y_f_bound : float
        Freeze threshold for ||Y_f||_F.
    coordinates : {"transformed", "original"}
        Whether the plant block integrates s or x.
    learning : bool
        Enable the learner once excitation is detected.
    policy : callable, optional
        psi(s, t) used for all t instead of the actor.
    actor_weights : ndarray, optional
        Fixed weights for the actor policy (replay).
    fallback : callable, optional
        psi(s, t) used before the excitation time.
    """

    def __init__(
        self,
        model: TransformedModel,
        basis: BasisSet,
        Q: np.ndarray,
        R: np.ndarray,
        gains: LearnerGains,
        beta1: np.ndarray,
        extrap_points: np.ndarray,
        y_f_bound: float = cfg.Y_F_BOUND,
        *,
        coordinates: str = "transformed",
        learning: bool = True,
        policy: Optional[Policy] = None,
        actor_weights: Optional[np.ndarray] = None,
        fallback: Optional[Policy] = None,
    ) -> None:
        if coordinates not in COORDINATES:
            raise ValueError(f"coordinates must be one of {COORDINATES}")
        self.model = model
        self.plant: PlantModel = model.plant
        self.box = model.box
        self.basis = basis
        self.Q = np.asarray(Q, dtype=float)
        self.R = np.atleast_2d(np.asarray(R, dtype=float))
        self.R_inv = _inverse_R(self.R)
        self.gains = gains
        self.beta1 = np.asarray(beta1, dtype=float)
        self.extrap_points = np.asarray(extrap_points, dtype=float)
        self.extrap = BellmanPoints.build(self.extrap_points, basis, model, self.Q, self.R_inv)
        self.y_f_bound = float(y_f_bound)
        self.coordinates = coordinates
        self.learning = learning
        self.policy = policy
        self.actor_weights = None if actor_weights is None else np.asarray(actor_weights, dtype=float)
        self.fallback = fallback
        self.layout = _Layout(model.n, model.p, basis.L)
        self.s0 = np.zeros(model.n)
        self._theta_held = np.zeros(model.p)
        self.gamma_floor_hits = 0

    # ----- construction ----------------------------------------------------

    @classmethod
    def from_config(
        cls,
        config: SimConfig,
        *,
        plant: Optional[PlantModel] = None,
        coordinates: str = "transformed",
        learning: bool = True,
        policy: Optional[Policy] = None,
        actor_weights: Optional[np.ndarray] = None,
    ) -> "ClosedLoop":
        plant = plant or config.plant_model()
        config.validate(plant)
        model = TransformedModel(plant, config.safe_box(plant))
        basis = config.basis_set(plant.n)
        fallback: Optional[Policy] = None
        if config.fallback == "zero":
            q = plant.q

            def fallback(s: np.ndarray, t: float) -> np.ndarray:
                return np.zeros(q)

        # "initial_actor" needs no callable: the actor weights are held at
        # W_a0 until learning starts.
        points = make_extrapolation_grid(plant.n, config.extrap_count, config.extrap_half_width, config.seed)
        return cls(
            model, basis, config.Q, config.R, config.gains(), config.beta1, points,
            config.y_f_bound,
            coordinates=coordinates, learning=learning, policy=policy,
            actor_weights=actor_weights, fallback=fallback,
        )

    def initial_state(
        self,
        x0: np.ndarray,
        theta_hat0: np.ndarray,
        W_c0: np.ndarray,
        W_a0: np.ndarray,
        Gamma0: np.ndarray,
    ) -> AugmentedState:
        x0 = np.asarray(x0, dtype=float).copy()
        s0 = bt_forward(x0, self.box)
        self.s0 = s0.copy()
        est = EstimatorState.initial(s0, theta_hat0, self.beta1, self.y_f_bound)
        learner = LearnerState(
            W_c_hat=np.array(W_c0, dtype=float),
            W_a_hat=np.array(W_a0, dtype=float),
            Gamma=np.array(Gamma0, dtype=float),
            gains=self.gains,
            extrap_points=self.extrap_points,
        )
        return AugmentedState(t=0.0, s=s0, x=x0, estimator=est, learner=learner)

    # ----- packing ---------------------------------------------------------

    def pack(self, state: AugmentedState) -> np.ndarray:
        e, lr = state.estimator, state.learner
        first = state.x if self.coordinates == "original" else state.s
        return np.concatenate([
            first,
            e.Y.ravel(), e.Y_f.ravel(), e.G_f, e.X_f, e.theta_hat,
            lr.W_c_hat, lr.Gamma.ravel(), lr.W_a_hat,
            [state.cost],
        ])

    def _unpack(self, z: np.ndarray, t: float, previous: AugmentedState) -> AugmentedState:
        v = self.layout.views(z.copy())
        if self.coordinates == "original":
            x = v["plant"]
            try:
                s = bt_forward(x, self.box)
            except DomainError as err:
                raise SafetyViolation(str(err), t=previous.t) from None
        else:
            s = v["plant"]
            x = bt_inverse(s, self.box)
        est = EstimatorState(
            Y=v["Y"], Y_f=v["Y_f"], G_f=v["G_f"], X_f=v["X_f"], theta_hat=v["theta_hat"],
            beta1=self.beta1, s0=self.s0, Y_f_bound=self.y_f_bound,
            frozen=previous.estimator.frozen,
        )
        learner = LearnerState(
            W_c_hat=v["W_c"], W_a_hat=v["W_a"], Gamma=v["Gamma"],
            gains=self.gains, extrap_points=self.extrap_points,
        )
        return AugmentedState(
            t=t, s=s, x=x, estimator=est, learner=learner, cost=float(v["J"]),
            T_detected=previous.T_detected, freeze_time=previous.freeze_time,
        )

    # ----- vector field ----------------------------------------------------

    def learning_active(self, state: AugmentedState) -> bool:
        return self.learning and self.policy is None and state.T_detected is not None

    def _control(
        self,
        t: float,
        s: np.ndarray,
        learner: LearnerState,
        now: BellmanPoints,
        T_active: Optional[float],
    ) -> np.ndarray:
        if self.policy is not None:
            return np.atleast_1d(np.asarray(self.policy(s, t), dtype=float))
        if self.actor_weights is not None:
            replay = dataclasses.replace(learner, W_a_hat=self.actor_weights)
            return control_command(t, s, replay, self.basis, self.model, self.R, points=now)
        return control_command(t, s, learner, self.basis, self.model, self.R, T_active, self.fallback, points=now)

    def derivative(self, t: float, z: np.ndarray, frozen: bool, T_active: Optional[float]) -> np.ndarray:
        """
        z' for fixed switching flags. `T_active` is the excitation time while
        the learner runs and None otherwise. The theta_hat block is held here;
        step() advances it with advance_theta_hat.
        """
        v = self.layout.views(z)
        if self.coordinates == "original":
            x = v["plant"]
            s = bt_forward(x, self.box)
        else:
            s = v["plant"]
        y, G, f1 = self.model.maps(s)
        now = BellmanPoints.build(s, self.basis, self.model, self.Q, self.R_inv, maps=(y[None], G[None], f1[None]))
        learner = LearnerState(
            W_c_hat=v["W_c"], W_a_hat=v["W_a"], Gamma=v["Gamma"],
            gains=self.gains, extrap_points=self.extrap_points,
        )
        u = self._control(t, s, learner, now, T_active)

        if self.coordinates == "original":
            d_plant = self.plant.dynamics(x, u)
        else:
            d_plant = f1 + y @ self.plant.theta_true + G @ u

        est = EstimatorState(
            Y=v["Y"], Y_f=v["Y_f"], G_f=v["G_f"], X_f=v["X_f"], theta_hat=v["theta_hat"],
            beta1=self.beta1, s0=self.s0, Y_f_bound=self.y_f_bound, frozen=frozen,
        )
        de = estimator_derivative(est, s, u, y, G, f1)
        dl = learner_derivative(
            learner, s, v["theta_hat"], self.basis, self.model, self.Q, self.R,
            learning=T_active is not None, now=now, extrap=self.extrap,
        )

        running = s @ self.Q @ s + u @ self.R @ u
        return np.concatenate([
            d_plant,
            de.dY.ravel(), de.dY_f.ravel(), de.dG_f, de.dX_f, self._theta_held,
            dl.dW_c, dl.dGamma.ravel(), dl.dW_a,
            [running],
        ])

    # ----- stepping --------------------------------------------------------

    def step(self, state: AugmentedState, dt: float, t_next: Optional[float] = None) -> AugmentedState:
        """
        Advance every continuous state by dt, then re-evaluate the switching
        flags and run the safety and divergence checks.

        The filters, plant and learner take one RK4 step; theta_hat then
        takes an exact step against the advanced Y_f and X_f.
        """
        if not dt > 0:
            raise ValueError("dt must be positive")
        frozen = state.estimator.frozen
        T_active = state.T_detected if self.learning_active(state) else None
        t = state.t
        z = self.pack(state)
        try:
            z_new = rk4(lambda tt, zz: self.derivative(tt, zz, frozen, T_active), t, z, dt)
        except OverflowError as err:
            raise NumericalDivergence(str(err), t=t) from None
        except DomainError as err:
            if self.coordinates == "original":
                raise SafetyViolation(str(err), t=t) from None
            raise NumericalDivergence(str(err), t=t) from None
        except np.linalg.LinAlgError as err:
            raise NumericalDivergence(f"linear algebra failure: {err}", t=t) from None

        self._check_divergence(z_new, t)
        new = self._unpack(z_new, t + dt if t_next is None else t_next, state)

        est = new.estimator
        try:
            est.theta_hat = advance_theta_hat(est.theta_hat, est.Y_f, est.X_f, self.beta1, dt)
            new.learner.Gamma, floored = repair_gamma(new.learner.Gamma)
        except np.linalg.LinAlgError as err:
            raise NumericalDivergence(str(err), t=t) from None
        if not np.all(np.isfinite(est.theta_hat)):
            raise NumericalDivergence(f"non-finite parameter estimate after step from t={t:.6g}", t=t)
        if floored:
            if self.gamma_floor_hits == 0:
                logger.warning("least-squares gain eigenvalue floored at t=%.6g", new.t)
            self.gamma_floor_hits += 1

        if not self.box.contains(new.x):
            raise SafetyViolation(f"state {new.x.tolist()} left the safe box at t={new.t:.6g}", t=t)

        if not frozen and check_freeze(new.estimator):
            new.estimator.frozen = True
            new.freeze_time = new.t
            logger.info("filters frozen at t=%.6g (||Y_f||_F > %.6g)", new.t, self.y_f_bound)

        if new.T_detected is None:
            report = excitation_monitor(new.estimator, t=new.t)
            if report.T_detected is not None:
                new.T_detected = report.T_detected
                logger.info("Y_f full rank at t=%.6g (lambda_min=%.3e)", new.t, report.lambda_min)
        return new

    def _check_divergence(self, z: np.ndarray, t: float) -> None:
        limit = cfg._get_cfg("DIVERGENCE_LIMIT", 1e9)
        if not np.all(np.isfinite(z)):
            raise NumericalDivergence(f"non-finite state after step from t={t:.6g}", t=t)
        for name, sl in self.layout.slices.items():
            if np.linalg.norm(z[sl]) > limit:
                raise NumericalDivergence(f"{name} norm exceeds {limit:g} after step from t={t:.6g}", t=t)

    # ----- diagnostics -----------------------------------------------------

    def sample(self, state: AugmentedState) -> list[float]:
        """One trajectory row in `trajectory_columns` order."""
        est, lr = state.estimator, state.learner
        s = state.s
        learning = self.learning_active(state)
        now = BellmanPoints.build(s, self.basis, self.model, self.Q, self.R_inv)
        u = self._control(state.t, s, lr, now, state.T_detected if learning else None)
        gamma1 = self.gains.gamma1
        delta = now.terms(lr.W_c_hat, lr.W_a_hat, est.theta_hat, gamma1).delta[0]
        ext = self.extrap.terms(lr.W_c_hat, lr.W_a_hat, est.theta_hat, gamma1)
        gamma_eig = np.linalg.eigvalsh(lr.Gamma)
        theta_true = self.plant.theta_true
        row = [state.t]
        row += state.x.tolist() + s.tolist() + u.tolist()
        row += est.theta_hat.tolist() + lr.W_c_hat.tolist() + lr.W_a_hat.tolist()
        row += [
            float(delta),
            excitation_monitor(est).lambda_min,
            float(np.linalg.norm(est.Y_f, "fro")),
            assumption3_estimate(ext.omega, ext.rho),
            float(gamma_eig[0]),
            float(gamma_eig[-1]),
            float(np.linalg.norm(lr.W_a_hat - lr.W_c_hat)),
            identity_residual(est, theta_true),
            parameter_lyapunov(est, theta_true),
            float(s @ self.Q @ s + u @ self.R @ u),
            state.cost,
            int(est.frozen),
            int(learning),
        ]
        return row

    def simulate(
        self,
        initial: AugmentedState,
        t_final: float,
        dt: float,
        sample_interval: float,
        seed: int = cfg.SEED,
    ) -> Trajectory:
        """
        Integrate from `initial` to t_final, logging every `sample_interval`.

        On SafetyViolation or NumericalDivergence the samples accepted so far
        are attached to the exception as `trajectory`.
        """
        n_steps, every = step_counts(t_final, dt, sample_interval)
        columns = trajectory_columns(self.model.n, self.model.p, self.model.q, self.basis.L)
        self.gamma_floor_hits = 0
        rows = [self.sample(initial)]
        state = initial
        logger.debug("integrating %d steps of %g s (%s coordinates)", n_steps, dt, self.coordinates)
        try:
            for k in range(1, n_steps + 1):
                state = self.step(state, dt, t_next=k * dt)
                if k % every == 0 or k == n_steps:
                    rows.append(self.sample(state))
        except SimulationError as err:
            traj = self._trajectory(rows, columns, state, seed, dt)
            traj.failure = type(err).__name__
            traj.failure_time = state.t
            err.trajectory = traj
            if np.isnan(err.t):
                err.t = state.t
            logger.info("run stopped at t=%.6g: %s", state.t, err)
            raise
        traj = self._trajectory(rows, columns, state, seed, dt)
        logger.info(
            "run finished: t=%.6g cost=%.6g T_detected=%s", state.t, state.cost, traj.T_detected
        )
        return traj

    def _trajectory(
        self, rows: list[list[float]], columns: list[str], state: AugmentedState, seed: int, dt: float
    ) -> Trajectory:
        frame = pd.DataFrame(rows, columns=columns)
        frame["frozen"] = frame["frozen"].astype(int)
        frame["learning"] = frame["learning"].astype(int)
        return Trajectory(
            frame=frame,
            seed=seed,
            dt=dt,
            T_detected=state.T_detected,
            freeze_time=state.freeze_time,
            gamma_floor_hits=self.gamma_floor_hits,
            final_state=state,
        )


def run(
    config: SimConfig,
    *,
    learning: bool = True,
    actor_weights: Optional[np.ndarray] = None,
    policy: Optional[Policy] = None,
    coordinates: str = "transformed",
    plant: Optional[PlantModel] = None,
) -> Trajectory:
    """Integrate the scenario from t=0 to config.t_final."""
    loop = ClosedLoop.from_config(
        config, plant=plant, coordinates=coordinates, learning=learning,
        policy=policy, actor_weights=actor_weights,
    )
    initial = loop.initial_state(config.x0, config.theta_hat0, config.W_c0, config.W_a0, config.Gamma0)
    logger.info("running %s (dt=%g, t_final=%g, seed=%d)", config.plant, config.dt, config.t_final, config.seed)
    return loop.simulate(initial, config.t_final, config.dt, config.sample_interval, config.seed)


class Lemma1Report(NamedTuple):
    max_deviation: float
    samples: int
    transformed_failure: Optional[str]
    original_failure: Optional[str]


def lemma1_check(
    config: SimConfig,
    policy: Optional[Policy] = None,
    plant: Optional[PlantModel] = None,
) -> Lemma1Report:
    """
    Integrate the same closed loop once in transformed and once in original
    coordinates and report sup ||x_original(t) - b^-1(s(t))|| over the common
    samples. `policy` is zeta(s, t); the original-coordinate run applies
    zeta(b(x), t). Runs that stop early are compared up to their last sample.
    """
    learning = policy is None
    results: dict[str, tuple[Optional[Trajectory], Optional[str]]] = {}
    for coords in COORDINATES:
        try:
            traj = run(config, learning=learning, policy=policy, coordinates=coords, plant=plant)
            results[coords] = (traj, None)
        except SimulationError as err:
            results[coords] = (err.trajectory, type(err).__name__)

    trans, trans_fail = results["transformed"]
    orig, orig_fail = results["original"]
    if trans is None or orig is None:
        return Lemma1Report(float("nan"), 0, trans_fail, orig_fail)
    rows = min(len(trans.frame), len(orig.frame))
    if rows == 0:
        return Lemma1Report(float("nan"), 0, trans_fail, orig_fail)
    gap = orig.block("x")[:rows] - trans.block("x")[:rows]
    deviation = float(np.max(np.linalg.norm(gap, axis=1)))
    return Lemma1Report(deviation, rows, trans_fail, orig_fail)
