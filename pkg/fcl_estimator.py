# fcl_estimator.py
"""
Filtered concurrent-learning parameter estimator.

The filters integrate

    Y'   = y(s)                      Y(0)   = 0
    Y_f' = Y^T Y                     Y_f(0) = 0
    G_f' = G(s) u + f1_T(s)          G_f(0) = 0
    X_f' = Y^T (s - s0 - G_f)        X_f(0) = 0

while ||Y_f||_F <= Y_f_bound, and hold all four constant once the bound is
crossed. Since s - s0 - G_f = Y theta along any trajectory, X_f = Y_f theta at
all times, which drives

    theta_hat' = beta1 Y_f^T (X_f - Y_f theta_hat).

That equation is linear in theta_hat and very stiff once Y_f is large, so
the closed loop advances it with advance_theta_hat (exact over one step with
the filters held) rather than with the explicit integrator.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg
import scipy.special

import config as cfg
from errors import DimensionMismatch

__all__ = [
    "EstimatorState",
    "EstimatorDerivative",
    "ExcitationReport",
    "estimator_derivative",
    "check_freeze",
    "excitation_monitor",
    "identity_residual",
    "parameter_lyapunov",
    "advance_theta_hat",
]


@dataclass
class EstimatorState:
    """
    Filter states, parameter estimate and the switching flag.

    `frozen` only ever goes False -> True; see check_freeze.
    """

    Y: np.ndarray
    Y_f: np.ndarray
    G_f: np.ndarray
    X_f: np.ndarray
    theta_hat: np.ndarray
    beta1: np.ndarray
    s0: np.ndarray
    Y_f_bound: float = cfg.Y_F_BOUND
    frozen: bool = False

    @classmethod
    def initial(
        cls,
        s0: np.ndarray,
        theta_hat0: np.ndarray,
        beta1: np.ndarray,
        Y_f_bound: Optional[float] = None,
    ) -> "EstimatorState":
        s0 = np.asarray(s0, dtype=float).copy()
        theta_hat0 = np.asarray(theta_hat0, dtype=float).copy()
        n, p = s0.shape[0], theta_hat0.shape[0]
        beta1 = np.asarray(beta1, dtype=float)
        if beta1.shape != (p, p):
            raise DimensionMismatch(f"beta1 has shape {beta1.shape}, expected ({p}, {p})")
        return cls(
            Y=np.zeros((n, p)),
            Y_f=np.zeros((p, p)),
            G_f=np.zeros(n),
            X_f=np.zeros(p),
            theta_hat=theta_hat0,
            beta1=beta1,
            s0=s0,
            Y_f_bound=float(cfg.Y_F_BOUND if Y_f_bound is None else Y_f_bound),
        )

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.Y.shape[1]


class EstimatorDerivative(NamedTuple):
    dY: np.ndarray
    dY_f: np.ndarray
    dG_f: np.ndarray
    dX_f: np.ndarray
    dtheta_hat: np.ndarray


class ExcitationReport(NamedTuple):
    lambda_min: float
    full_rank: bool
    T_detected: Optional[float]


def estimator_derivative(
    state: EstimatorState,
    s: np.ndarray,
    u: np.ndarray,
    y_s: np.ndarray,
    G_s: np.ndarray,
    f1_integrand: Optional[np.ndarray] = None,
) -> EstimatorDerivative:
    """
    Time derivative of the estimator at transformed state s under control u.

    `y_s`, `G_s` and `f1_integrand` are y(s), G(s) and the transformed known
    drift f1_T(s) (zero when the plant has none). The filter derivatives are
    zero once the state is frozen; theta_hat keeps adapting either way.
    """
    n, p = state.n, state.p
    s = np.asarray(s, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if s.shape != (n,) or y_s.shape != (n, p) or G_s.shape != (n, u.shape[0]):
        raise DimensionMismatch(
            f"estimator expects s ({n},), y ({n}, {p}), G ({n}, q) matching u; "
            f"got {s.shape}, {y_s.shape}, {G_s.shape} with u {u.shape}"
        )

    dtheta = state.beta1 @ (state.Y_f.T @ (state.X_f - state.Y_f @ state.theta_hat))
    if state.frozen:
        return EstimatorDerivative(
            np.zeros((n, p)), np.zeros((p, p)), np.zeros(n), np.zeros(p), dtheta
        )

    dG_f = G_s @ u
    if f1_integrand is not None:
        dG_f = dG_f + f1_integrand
    return EstimatorDerivative(
        dY=np.array(y_s, dtype=float),
        dY_f=state.Y.T @ state.Y,
        dG_f=dG_f,
        dX_f=state.Y.T @ (s - state.s0 - state.G_f),
        dtheta_hat=dtheta,
    )


def check_freeze(state: EstimatorState) -> bool:
    """Updated freeze flag: set once ||Y_f||_F exceeds Y_f_bound, never cleared."""
    if state.frozen:
        return True
    return bool(np.linalg.norm(state.Y_f, "fro") > state.Y_f_bound)


def excitation_monitor(
    state: EstimatorState,
    t: Optional[float] = None,
    T_detected: Optional[float] = None,
    rank_tol: Optional[float] = None,
) -> ExcitationReport:
    """
    Minimum eigenvalue of Y_f and whether it has become full rank.

    Full rank means lambda_min > rank_tol * lambda_max with lambda_max > 0.
    Without a configured rank_tol the numpy.linalg.matrix_rank cutoff is
    used, p * eps relative to the largest eigenvalue. The first time `t` at
    which the test holds is returned as T_detected; an already known
    T_detected is passed through unchanged.
    """
    eig = np.linalg.eigvalsh(0.5 * (state.Y_f + state.Y_f.T))
    lam_min, lam_max = float(eig[0]), float(eig[-1])
    if rank_tol is None:
        rank_tol = cfg._get_cfg("RANK_TOL", None)
    if rank_tol is None:
        rank_tol = state.p * np.finfo(float).eps
    full_rank = bool(lam_max > 0.0 and lam_min > rank_tol * lam_max)
    if T_detected is None and full_rank and t is not None:
        T_detected = float(t)
    return ExcitationReport(lam_min, full_rank, T_detected)


def identity_residual(state: EstimatorState, theta_true: np.ndarray) -> float:
    """||X_f - Y_f theta_true||; zero up to integration error."""
    return float(np.linalg.norm(state.X_f - state.Y_f @ np.asarray(theta_true, dtype=float)))


def parameter_lyapunov(state: EstimatorState, theta_true: np.ndarray) -> float:
    """V1 = 1/2 theta_tilde^T beta1^-1 theta_tilde."""
    err = np.asarray(theta_true, dtype=float) - state.theta_hat
    return float(0.5 * err @ np.linalg.solve(state.beta1, err))


def advance_theta_hat(
    theta_hat: np.ndarray,
    Y_f: np.ndarray,
    X_f: np.ndarray,
    beta1: np.ndarray,
    dt: float,
) -> np.ndarray:
    """
    theta_hat after dt of theta_hat' = beta1 Y_f^T (X_f - Y_f theta_hat)
    with Y_f and X_f held fixed.

    With beta1 = C C^T and Y_f C = U S V^T the flow decouples into scalar
    modes nu_i' = S_i (r_i - S_i nu_i), nu = V^T C^-1 theta_hat, r = U^T X_f,
    each solved in closed form. Directions where Y_f is singular stay put,
    and stiff directions land on their fixed point without overshoot.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    theta_hat = np.asarray(theta_hat, dtype=float)
    p = theta_hat.shape[0]
    Y_f = np.asarray(Y_f, dtype=float)
    X_f = np.asarray(X_f, dtype=float)
    if Y_f.shape != (p, p) or X_f.shape != (p,):
        raise DimensionMismatch(f"Y_f {Y_f.shape} and X_f {X_f.shape} do not match theta_hat ({p},)")
    C = np.linalg.cholesky(np.asarray(beta1, dtype=float))
    U, S, Vt = np.linalg.svd(Y_f @ C)
    nu = Vt @ scipy.linalg.solve_triangular(C, theta_hat, lower=True)
    r = U.T @ X_f
    rate = S * S * dt
    nu = np.exp(-rate) * nu + S * dt * scipy.special.exprel(-rate) * r
    return C @ (Vt.T @ nu)
