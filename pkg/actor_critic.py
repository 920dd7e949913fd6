# actor_critic.py
"""
Value/policy approximation over a quadratic basis, Bellman errors at the
current state and at fixed extrapolation points, and the critic, gain and
actor update laws.

With sigma the basis, grad its Jacobian (L x n), R the input penalty:

    V_hat(s)  = W_c^T sigma(s)
    u_hat(s)  = -1/2 R^-1 G(s)^T grad(s)^T W_a
    omega     = grad(s) (y(s) theta_hat + f1_T(s) + G(s) u_hat)
    delta_hat = W_c^T omega + u_hat^T R u_hat + s^T Q s
    rho       = 1 + gamma1 omega^T omega
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
import scipy.linalg
from scipy.stats import qmc

import config as cfg
from barrier import bt_forward
from errors import ConfigError, DimensionMismatch, NonPDGamma, SingularR
from plant import TransformedModel

__all__ = [
    "BasisSet",
    "make_basis",
    "LearnerGains",
    "LearnerState",
    "BellmanPoints",
    "BellmanTerms",
    "ExtrapolatedBE",
    "LearnerDerivative",
    "value_estimate",
    "policy_estimate",
    "policy_in_original_coordinates",
    "bellman_error",
    "extrapolated_bellman_errors",
    "analytical_bellman_error",
    "learner_derivative",
    "update_laws",
    "assumption3_estimate",
    "repair_gamma",
    "control_command",
    "initial_actor_fallback",
    "make_extrapolation_grid",
    "lqr_reference",
]

Fallback = Callable[[np.ndarray, float], np.ndarray]


# ---------------------------------------------------------------------------
# Basis
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BasisSet:
    """Quadratic monomials s_i s_j, one per entry of `pairs`."""

    name: str
    n: int
    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        pairs = tuple((int(i), int(j)) for i, j in self.pairs)
        if not pairs or any(not (0 <= i < self.n and 0 <= j < self.n) for i, j in pairs):
            raise ConfigError(f"basis {self.name!r}: monomial indices must lie in [0, {self.n})")
        object.__setattr__(self, "pairs", pairs)
        I = np.array([i for i, _ in pairs])
        J = np.array([j for _, j in pairs])
        eye = np.eye(self.n)
        object.__setattr__(self, "_I", I)
        object.__setattr__(self, "_J", J)
        object.__setattr__(self, "_EI", eye[I])
        object.__setattr__(self, "_EJ", eye[J])

    @property
    def L(self) -> int:
        return len(self.pairs)

    def sigma(self, s: np.ndarray) -> np.ndarray:
        """Basis values, shape (..., L)."""
        s = np.asarray(s, dtype=float)
        return s[..., self._I] * s[..., self._J]

    def grad_sigma(self, s: np.ndarray) -> np.ndarray:
        """Jacobian d sigma / ds, shape (..., L, n)."""
        s = np.asarray(s, dtype=float)
        return self._EI * s[..., self._J][..., None] + self._EJ * s[..., self._I][..., None]


def make_basis(name: str, n: int) -> BasisSet:
    if name == "two_state_quadratic":
        pairs = ((0, 0), (0, 1), (1, 1))
    elif name == "robot_quadratic":
        # s1s3, s2s4, s3s2, s4s1, s1s2, s4s3, s1^2, s2^2, s3^2, s4^2
        pairs = ((0, 2), (1, 3), (2, 1), (3, 0), (0, 1), (3, 2), (0, 0), (1, 1), (2, 2), (3, 3))
    elif name == "quadratic":
        pairs = tuple((i, j) for i in range(n) for j in range(i, n))
    else:
        raise ConfigError(f"unknown basis {name!r}; choose two_state_quadratic, robot_quadratic or quadratic")
    needed = 1 + max(max(p) for p in pairs)
    if name != "quadratic" and n != needed:
        raise ConfigError(f"basis {name!r} needs n={needed}, got n={n}")
    return BasisSet(name=name, n=n, pairs=pairs)


# ---------------------------------------------------------------------------
# Learner state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LearnerGains:
    k_c1: float
    k_c2: float
    k_a1: float
    k_a2: float
    beta: float
    gamma1: float


@dataclass
class LearnerState:
    W_c_hat: np.ndarray
    W_a_hat: np.ndarray
    Gamma: np.ndarray
    gains: LearnerGains
    extrap_points: np.ndarray

    @property
    def N(self) -> int:
        return self.extrap_points.shape[0]


class BellmanTerms(NamedTuple):
    u: np.ndarray
    omega: np.ndarray
    delta: np.ndarray
    rho: np.ndarray


class ExtrapolatedBE(NamedTuple):
    delta: np.ndarray
    omega: np.ndarray
    rho: np.ndarray


class LearnerDerivative(NamedTuple):
    dW_c: np.ndarray
    dGamma: np.ndarray
    dW_a: np.ndarray


def _inverse_R(R: np.ndarray) -> np.ndarray:
    R = np.atleast_2d(np.asarray(R, dtype=float))
    try:
        R_inv = np.linalg.inv(R)
    except np.linalg.LinAlgError:
        raise SingularR("input penalty R is singular") from None
    if not np.all(np.isfinite(R_inv)):
        raise SingularR("input penalty R is singular")
    return R_inv


@dataclass(frozen=True, eq=False)
class BellmanPoints:
    """
    Everything about a batch of states that does not depend on the weights or
    on theta_hat. Built once for the fixed extrapolation points, and once per
    derivative evaluation for the current state.

    With H = grad G, the actor term grad G u_hat is -1/2 G_sigma W_a and
    u_hat^T R u_hat is 1/4 W_a^T G_sigma W_a, so `terms` only needs products
    with the cached grad y, grad f1_T and G_sigma.
    """

    s: np.ndarray
    grad: np.ndarray
    y: np.ndarray
    G: np.ndarray
    f1: np.ndarray
    state_cost: np.ndarray
    policy_map: np.ndarray
    G_sigma: np.ndarray
    grad_y: np.ndarray
    grad_f1: np.ndarray

    @classmethod
    def build(
        cls,
        s: np.ndarray,
        basis: BasisSet,
        model: TransformedModel,
        Q: np.ndarray,
        R_inv: np.ndarray,
        maps: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]] = None,
    ) -> "BellmanPoints":
        s = np.atleast_2d(np.asarray(s, dtype=float))
        if s.shape[-1] != basis.n:
            raise DimensionMismatch(f"points have n={s.shape[-1]}, basis has n={basis.n}")
        grad = basis.grad_sigma(s)
        y, G, f1 = model.maps(s) if maps is None else maps
        Ht = np.swapaxes(grad @ G, -1, -2)
        R_inv_Ht = R_inv @ Ht
        policy_map = -0.5 * R_inv_Ht
        G_sigma = np.swapaxes(Ht, -1, -2) @ R_inv_Ht
        state_cost = np.sum((s @ Q) * s, axis=-1)
        grad_y = grad @ y
        grad_f1 = (grad @ f1[..., None])[..., 0]
        return cls(s, grad, y, G, f1, state_cost, policy_map, G_sigma, grad_y, grad_f1)

    def terms(
        self,
        W_c: np.ndarray,
        W_a: np.ndarray,
        theta_hat: np.ndarray,
        gamma1: float,
    ) -> BellmanTerms:
        u = self.policy_map @ W_a
        GW = self.G_sigma @ W_a
        omega = self.grad_f1 + self.grad_y @ theta_hat - 0.5 * GW
        delta = omega @ W_c + 0.25 * (GW @ W_a) + self.state_cost
        rho = 1.0 + gamma1 * np.sum(omega * omega, axis=-1)
        return BellmanTerms(u, omega, delta, rho)


# ---------------------------------------------------------------------------
# Value, policy, Bellman errors
# ---------------------------------------------------------------------------

def value_estimate(s: np.ndarray, W_c_hat: np.ndarray, basis: BasisSet) -> float | np.ndarray:
    v = basis.sigma(s) @ np.asarray(W_c_hat, dtype=float)
    return float(v) if np.ndim(v) == 0 else v


def policy_estimate(
    s: np.ndarray,
    W_a_hat: np.ndarray,
    basis: BasisSet,
    G_s: np.ndarray,
    R: np.ndarray,
) -> np.ndarray:
    """u_hat = -1/2 R^-1 G(s)^T grad(s)^T W_a, shape (..., q)."""
    R_inv = _inverse_R(R)
    gradT_W = np.einsum("...ln,l->...n", basis.grad_sigma(s), np.asarray(W_a_hat, dtype=float))
    return -0.5 * np.einsum("qr,...nr,...n->...q", R_inv, np.asarray(G_s, dtype=float), gradT_W)


def policy_in_original_coordinates(
    x: np.ndarray,
    W_a_hat: np.ndarray,
    basis: BasisSet,
    model: TransformedModel,
    R: np.ndarray,
) -> np.ndarray:
    """u(x) = u_hat(b(x), W_a); raises DomainError outside the box."""
    s = bt_forward(x, model.box)
    return policy_estimate(s, W_a_hat, basis, model.input_map_G(s), R)


def bellman_error(
    s: np.ndarray,
    W_c_hat: np.ndarray,
    W_a_hat: np.ndarray,
    theta_hat: np.ndarray,
    basis: BasisSet,
    model: TransformedModel,
    Q: np.ndarray,
    R: np.ndarray,
) -> float:
    R = np.atleast_2d(np.asarray(R, dtype=float))
    pts = BellmanPoints.build(s, basis, model, np.asarray(Q, dtype=float), _inverse_R(R))
    return float(pts.terms(W_c_hat, W_a_hat, theta_hat, 0.0).delta[0])


def extrapolated_bellman_errors(
    extrap_points: np.ndarray,
    W_c_hat: np.ndarray,
    W_a_hat: np.ndarray,
    theta_hat: np.ndarray,
    basis: BasisSet,
    model: TransformedModel,
    Q: np.ndarray,
    R: np.ndarray,
    gamma1: float,
) -> ExtrapolatedBE:
    """Per-point delta_k (N,), omega_k (N, L) and rho_k (N,)."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    pts = BellmanPoints.build(extrap_points, basis, model, np.asarray(Q, dtype=float), _inverse_R(R))
    t = pts.terms(W_c_hat, W_a_hat, theta_hat, gamma1)
    return ExtrapolatedBE(t.delta, t.omega, t.rho)


def analytical_bellman_error(
    s: np.ndarray,
    W: np.ndarray,
    W_c_hat: np.ndarray,
    W_a_hat: np.ndarray,
    theta: np.ndarray,
    theta_hat: np.ndarray,
    basis: BasisSet,
    model: TransformedModel,
    R: np.ndarray,
) -> float:
    """
    Bellman error written through the estimation errors,

        -omega^T W~_c + 1/4 W~_a^T G_sigma W~_a - W^T grad y theta~,

    valid when W sigma reproduces the optimal value function exactly.
    """
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = basis.n
    pts = BellmanPoints.build(s, basis, model, np.zeros((n, n)), _inverse_R(R))
    omega = pts.terms(W_c_hat, W_a_hat, theta_hat, 0.0).omega[0]
    Wt_c = W - W_c_hat
    Wt_a = W - W_a_hat
    theta_err = np.asarray(theta, dtype=float) - np.asarray(theta_hat, dtype=float)
    return float(
        -omega @ Wt_c
        + 0.25 * Wt_a @ pts.G_sigma[0] @ Wt_a
        - W @ pts.grad[0] @ pts.y[0] @ theta_err
    )


# ---------------------------------------------------------------------------
# Update laws
# ---------------------------------------------------------------------------

def update_laws(
    gains: LearnerGains,
    Gamma: np.ndarray,
    W_c: np.ndarray,
    W_a: np.ndarray,
    now: BellmanTerms,
    G_sigma_now: np.ndarray,
    extrap: BellmanTerms,
    G_sigma_extrap: np.ndarray,
) -> LearnerDerivative:
    """
    Critic, gain and actor derivatives from the instantaneous terms (batch of
    one) and the N extrapolated terms. Sums over k run in index order.
    """
    N = extrap.omega.shape[0]
    k_c1, k_c2 = gains.k_c1, gains.k_c2

    w0, rho0, d0 = now.omega[0], now.rho[0], now.delta[0]
    wk, rhok, dk = extrap.omega, extrap.rho, extrap.delta

    critic_dir = k_c1 * w0 * (d0 / rho0) + (k_c2 / N) * ((dk / rhok) @ wk)
    dW_c = -Gamma @ critic_dir

    info = k_c1 * np.outer(w0, w0) / rho0**2 + (k_c2 / N) * ((wk.T / rhok**2) @ wk)
    dGamma = gains.beta * Gamma - Gamma @ info @ Gamma

    # G_sigma^T W_a omega^T W_c / (4 rho), instantaneous plus extrapolated
    coupling = k_c1 * (G_sigma_now[0].T @ W_a) * (w0 @ W_c) / (4.0 * rho0)
    proj = (wk @ W_c) / rhok
    coupling = coupling + (k_c2 / (4.0 * N)) * (proj @ (np.swapaxes(G_sigma_extrap, -1, -2) @ W_a))
    dW_a = -gains.k_a1 * (W_a - W_c) - gains.k_a2 * W_a + coupling

    return LearnerDerivative(dW_c, dGamma, dW_a)


def learner_derivative(
    learner: LearnerState,
    s: np.ndarray,
    theta_hat: np.ndarray,
    basis: BasisSet,
    model: TransformedModel,
    Q: np.ndarray,
    R: np.ndarray,
    learning: bool = True,
    *,
    now: Optional[BellmanPoints] = None,
    extrap: Optional[BellmanPoints] = None,
) -> LearnerDerivative:
    """
    Derivatives of (W_c_hat, Gamma, W_a_hat). All zero while `learning` is
    False, i.e. before the excitation time T.

    `now` and `extrap` are prebuilt points for s and for the learner's
    extrapolation states; the closed loop passes both so nothing is rebuilt
    per evaluation.
    """
    L = basis.L
    if not learning:
        return LearnerDerivative(np.zeros(L), np.zeros((L, L)), np.zeros(L))
    if now is None or extrap is None:
        Q = np.asarray(Q, dtype=float)
        R_inv = _inverse_R(R)
        if now is None:
            now = BellmanPoints.build(s, basis, model, Q, R_inv)
        if extrap is None:
            extrap = BellmanPoints.build(learner.extrap_points, basis, model, Q, R_inv)
    gamma1 = learner.gains.gamma1
    terms_now = now.terms(learner.W_c_hat, learner.W_a_hat, theta_hat, gamma1)
    terms_ext = extrap.terms(learner.W_c_hat, learner.W_a_hat, theta_hat, gamma1)
    return update_laws(
        learner.gains, learner.Gamma, learner.W_c_hat, learner.W_a_hat,
        terms_now, now.G_sigma, terms_ext, extrap.G_sigma,
    )


def assumption3_estimate(omega_k: np.ndarray, rho_k: np.ndarray) -> float:
    """lambda_min( (1/N) sum_k omega_k omega_k^T / rho_k^2 )."""
    omega_k = np.atleast_2d(omega_k)
    N = omega_k.shape[0]
    S = np.einsum("k,kl,km->lm", 1.0 / np.asarray(rho_k) ** 2, omega_k, omega_k) / N
    return float(np.linalg.eigvalsh(S)[0])


def repair_gamma(
    Gamma: np.ndarray,
    floor: Optional[float] = None,
    repair_tol: Optional[float] = None,
) -> tuple[np.ndarray, bool]:
    """
    Symmetrize Gamma and lift eigenvalues below `floor` up to it.

    Returns the repaired matrix and whether the floor was applied.

    Raises
    ------
    NonPDGamma
        If the smallest eigenvalue is below -repair_tol.
    """
    floor = cfg._get_cfg("GAMMA_FLOOR", 1e-8) if floor is None else floor
    repair_tol = cfg._get_cfg("GAMMA_REPAIR_TOL", 1e-3) if repair_tol is None else repair_tol
    sym = 0.5 * (Gamma + Gamma.T)
    if not np.all(np.isfinite(sym)):
        raise NonPDGamma("least-squares gain is not finite")
    eig, vec = np.linalg.eigh(sym)
    if eig[0] >= floor:
        return sym, False
    if eig[0] < -repair_tol:
        raise NonPDGamma(f"least-squares gain eigenvalue {eig[0]:.3e} below -{repair_tol}")
    repaired = (vec * np.maximum(eig, floor)) @ vec.T
    return 0.5 * (repaired + repaired.T), True


# ---------------------------------------------------------------------------
# Control
# ---------------------------------------------------------------------------

def initial_actor_fallback(
    W_a0: np.ndarray,
    basis: BasisSet,
    model: TransformedModel,
    R: np.ndarray,
) -> Fallback:
    """psi(s, t) = u_hat(s, W_a(0))."""
    W_a0 = np.array(W_a0, dtype=float)

    def psi(s: np.ndarray, t: float) -> np.ndarray:
        return policy_estimate(s, W_a0, basis, model.input_map_G(s), R)

    return psi


def control_command(
    t: float,
    s: np.ndarray,
    learner: LearnerState,
    basis: BasisSet,
    model: TransformedModel,
    R: np.ndarray,
    T_detected: Optional[float] = None,
    fallback: Optional[Fallback] = None,
    *,
    points: Optional[BellmanPoints] = None,
) -> np.ndarray:
    """
    psi(s, t) before the excitation time, u_hat(s, W_a) from then on.

    Without an explicit fallback the actor policy is used throughout; the
    actor weights are held at their initial values before T, so this is the
    initial-weight policy. `points`, built for s, supplies the policy map.
    """
    learning = T_detected is not None and t >= T_detected
    if not learning and fallback is not None:
        return np.atleast_1d(np.asarray(fallback(s, t), dtype=float))
    if points is not None:
        return points.policy_map[0] @ learner.W_a_hat
    return policy_estimate(s, learner.W_a_hat, basis, model.input_map_G(s), R)


def make_extrapolation_grid(
    n: int,
    count: int = cfg.EXTRAP_COUNT,
    half_width: float = cfg.EXTRAP_HALF_WIDTH,
    seed: int = cfg.SEED,
) -> np.ndarray:
    """Scrambled Halton sample of `count` points in [-half_width, half_width]^n."""
    if count < 1:
        raise ConfigError("extrapolation point count must be >= 1")
    if half_width <= 0:
        raise ConfigError("extrapolation half width must be positive")
    sampler = qmc.Halton(d=n, scramble=True, seed=np.random.default_rng(seed))
    unit = sampler.random(count)
    return qmc.scale(unit, -half_width * np.ones(n), half_width * np.ones(n))


def lqr_reference(
    A: np.ndarray,
    B: np.ndarray,
    Q: np.ndarray,
    R: np.ndarray,
    basis: BasisSet,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Riccati solution P, gain K (u* = -K s) and the ideal weights W for
    V*(s) = s^T P s over `basis`.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = scipy.linalg.solve_continuous_are(A, B, np.asarray(Q, dtype=float), R)
    P = 0.5 * (P + P.T)
    K = np.linalg.solve(R, B.T @ P)
    W = np.array([P[i, i] if i == j else 2.0 * P[i, j] for i, j in basis.pairs])
    covered = np.zeros_like(P, dtype=bool)
    for i, j in basis.pairs:
        covered[i, j] = covered[j, i] = True
    if np.any(~covered & (np.abs(P) > 1e-12)):
        raise ConfigError(f"basis {basis.name!r} cannot represent the Riccati value function")
    return P, K, W
