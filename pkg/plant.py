# plant.py
"""
Control-affine plants with linear-in-parameters drift,

    x' = f1(x) + f(x) theta + g(x) u,

and their barrier-transformed form

    s' = y(s) theta + f1_T(s) + G(s) u,

where row i of y, G and f1_T is row i of f, g, f1 evaluated at b^-1(s) and
scaled by B_i(s_i).

Every map takes states with shape (..., n) and returns (..., n, p),
(..., n, q) or (..., n), so extrapolation points can be evaluated as a batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from barrier import SafeBox, bt_forward, bt_inverse, derivative_factors
from errors import ConfigError, DimensionMismatch, SingularMassMatrix

__all__ = [
    "PlantModel",
    "TransformedModel",
    "regressor_y",
    "input_map_G",
    "make_two_state_plant",
    "make_robot_plant",
    "make_counterexample_plant",
    "make_linear_toy_plant",
    "robot_mass_matrix",
    "robot_coriolis_matrix",
    "get_plant",
    "PLANTS",
]

StateMap = Callable[[np.ndarray], np.ndarray]

ROBOT_P1 = 3.473
ROBOT_P2 = 0.196
ROBOT_P3 = 0.242
MASS_DET_MIN = 1e-10


@dataclass(frozen=True, eq=False)
class PlantModel:
    """
    A plant x' = f1(x) + f(x) theta + g(x) u on the open box `box`.

    `theta_true` is used only by the ground-truth integration and by
    test-mode error reporting; the learner never reads it.
    """

    name: str
    n: int
    p: int
    q: int
    f: StateMap
    g: StateMap
    theta_true: np.ndarray
    box: SafeBox
    f1: Optional[StateMap] = None

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta_true, dtype=float)
        if theta.shape != (self.p,):
            raise DimensionMismatch(f"{self.name}: theta_true has shape {theta.shape}, expected ({self.p},)")
        if self.box.n != self.n:
            raise DimensionMismatch(f"{self.name}: box has n={self.box.n}, plant has n={self.n}")
        object.__setattr__(self, "theta_true", theta)

    def known_drift(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.f1 is None:
            return np.zeros(x.shape)
        return self.f1(x)

    def dynamics(self, x: np.ndarray, u: np.ndarray, theta: Optional[np.ndarray] = None) -> np.ndarray:
        """x' in original coordinates; uses theta_true unless theta is given."""
        theta = self.theta_true if theta is None else np.asarray(theta, dtype=float)
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return (
            self.known_drift(x)
            + np.einsum("...np,p->...n", self.f(x), theta)
            + np.einsum("...nq,...q->...n", self.g(x), u)
        )


@dataclass(frozen=True)
class TransformedModel:
    """The plant seen through the barrier map of `box` (defaults to the plant's box)."""

    plant: PlantModel
    box: SafeBox = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.box is None:
            object.__setattr__(self, "box", self.plant.box)
        if self.box.n != self.plant.n:
            raise DimensionMismatch(f"box has n={self.box.n}, plant has n={self.plant.n}")

    @property
    def n(self) -> int:
        return self.plant.n

    @property
    def p(self) -> int:
        return self.plant.p

    @property
    def q(self) -> int:
        return self.plant.q

    def maps(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(y(s), G(s), f1_T(s)) from one barrier inversion."""
        s = np.asarray(s, dtype=float)
        x = bt_inverse(s, self.box)
        B = derivative_factors(s, self.box)
        y = B[..., :, None] * self.plant.f(x)
        G = B[..., :, None] * self.plant.g(x)
        f1 = B * self.plant.known_drift(x)
        return y, G, f1

    def regressor_y(self, s: np.ndarray) -> np.ndarray:
        return self.maps(s)[0]

    def input_map_G(self, s: np.ndarray) -> np.ndarray:
        return self.maps(s)[1]

    def known_drift(self, s: np.ndarray) -> np.ndarray:
        return self.maps(s)[2]

    def dynamics(self, s: np.ndarray, u: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """s' = y(s) theta + f1_T(s) + G(s) u."""
        y, G, f1 = self.maps(s)
        return f1 + np.einsum("...np,p->...n", y, theta) + np.einsum("...nq,...q->...n", G, u)


def regressor_y(s: np.ndarray, model: TransformedModel) -> np.ndarray:
    return model.regressor_y(s)


def input_map_G(s: np.ndarray, model: TransformedModel) -> np.ndarray:
    return model.input_map_G(s)


# ---------------------------------------------------------------------------
# Two-state benchmark
# ---------------------------------------------------------------------------

def _two_state_f(x: np.ndarray) -> np.ndarray:
    x1, x2 = x[..., 0], x[..., 1]
    z = np.zeros_like(x1)
    c = (np.cos(2.0 * x1) + 2.0) ** 2
    row1 = np.stack([x2, z, z, z], axis=-1)
    row2 = np.stack([z, x1, x2, x2 * c], axis=-1)
    return np.stack([row1, row2], axis=-2)


def _two_state_g(x: np.ndarray) -> np.ndarray:
    x1 = x[..., 0]
    return np.stack([np.zeros_like(x1), np.cos(2.0 * x1) + 2.0], axis=-1)[..., None]


def make_two_state_plant() -> PlantModel:
    return PlantModel(
        name="two_state",
        n=2,
        p=4,
        q=1,
        f=_two_state_f,
        g=_two_state_g,
        theta_true=np.array([1.0, -1.0, -0.5, 0.5]),
        box=SafeBox((-7.0, -5.0), (5.0, 7.0)),
    )


# ---------------------------------------------------------------------------
# Two-link planar manipulator with unknown friction
# ---------------------------------------------------------------------------

def robot_mass_matrix(x2: np.ndarray) -> np.ndarray:
    """Inertia matrix M(x2), shape (..., 2, 2)."""
    c2 = np.cos(np.asarray(x2, dtype=float))
    m11 = ROBOT_P1 + 2.0 * ROBOT_P3 * c2
    m12 = ROBOT_P2 + ROBOT_P3 * c2
    m22 = np.full_like(c2, ROBOT_P2)
    return np.stack([np.stack([m11, m12], axis=-1), np.stack([m12, m22], axis=-1)], axis=-2)


def robot_coriolis_matrix(x: np.ndarray) -> np.ndarray:
    """V_m(x), shape (..., 2, 2)."""
    x = np.asarray(x, dtype=float)
    s2 = np.sin(x[..., 1])
    x3, x4 = x[..., 2], x[..., 3]
    k = ROBOT_P3 * s2
    row1 = np.stack([-k * x4, -k * (x3 + x4)], axis=-1)
    row2 = np.stack([k * x3, np.zeros_like(x3)], axis=-1)
    return np.stack([row1, row2], axis=-2)


def _robot_mass_inverse(x: np.ndarray) -> np.ndarray:
    M = robot_mass_matrix(x[..., 1])
    det = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    if np.any(det < MASS_DET_MIN):
        raise SingularMassMatrix(f"mass matrix determinant {float(np.min(det)):.3e} below {MASS_DET_MIN}")
    return np.linalg.inv(M)


def _robot_f1(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    qd = x[..., 2:4]
    Minv = _robot_mass_inverse(x)
    acc = -np.einsum("...ij,...jk,...k->...i", Minv, robot_coriolis_matrix(x), qd)
    return np.concatenate([qd, acc], axis=-1)


def _robot_f(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    Minv = _robot_mass_inverse(x)
    d = np.stack([x[..., 2], x[..., 3], np.tanh(x[..., 2]), np.tanh(x[..., 3])], axis=-1)
    lower = -np.concatenate([Minv, Minv], axis=-1) * d[..., None, :]
    return np.concatenate([np.zeros(lower.shape), lower], axis=-2)


def _robot_g(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    MinvT = np.swapaxes(_robot_mass_inverse(x), -1, -2)
    return np.concatenate([np.zeros(MinvT.shape), MinvT], axis=-2)


def make_robot_plant() -> PlantModel:
    return PlantModel(
        name="robot",
        n=4,
        p=4,
        q=2,
        f=_robot_f,
        g=_robot_g,
        f1=_robot_f1,
        theta_true=np.array([5.3, 1.1, 8.45, 2.35]),
        box=SafeBox((-7.0, -7.0, -5.0, -5.0), (5.0, 5.0, 7.0, 7.0)),
    )


# ---------------------------------------------------------------------------
# Scalar plant whose original-coordinate stabilizer escapes in s
# ---------------------------------------------------------------------------

def make_counterexample_plant() -> PlantModel:
    """x' = x + x^2 u on (-0.5, 0.5); under u = -x it settles at 1, outside the box."""
    return PlantModel(
        name="counterexample",
        n=1,
        p=1,
        q=1,
        f=lambda x: np.asarray(x, dtype=float)[..., None],
        g=lambda x: (np.asarray(x, dtype=float) ** 2)[..., None],
        theta_true=np.array([1.0]),
        box=SafeBox((-0.5,), (0.5,)),
    )


# ---------------------------------------------------------------------------
# Plant that is exactly linear in the transformed coordinates
# ---------------------------------------------------------------------------

def make_linear_toy_plant(
    A_mat: np.ndarray,
    B_mat: np.ndarray,
    box: Optional[SafeBox] = None,
    name: str = "linear_toy",
) -> PlantModel:
    """
    Plant with s' = A s + B u exactly, theta = vec(A) in row-major order.

    f and g divide the desired transformed rows by B_i(b(x)_i), so the barrier
    scaling cancels and the quadratic basis represents the value function
    without reconstruction error.
    """
    A_mat = np.atleast_2d(np.asarray(A_mat, dtype=float))
    B_mat = np.asarray(B_mat, dtype=float)
    n = A_mat.shape[0]
    if A_mat.shape != (n, n):
        raise DimensionMismatch(f"A must be square, got {A_mat.shape}")
    if B_mat.ndim == 1:
        B_mat = B_mat[:, None]
    if B_mat.shape[0] != n:
        raise DimensionMismatch(f"B has {B_mat.shape[0]} rows, A has {n}")
    if box is None:
        box = SafeBox((-5.0,) * n, (5.0,) * n)
    eye = np.eye(n)

    def _scale(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = bt_forward(x, box)
        return s, derivative_factors(s, box)

    def f(x: np.ndarray) -> np.ndarray:
        s, Bs = _scale(np.asarray(x, dtype=float))
        # row i of y(s) is s placed in the i-th block of vec(A)
        y = np.einsum("ij,...k->...ijk", eye, s).reshape(s.shape[:-1] + (n, n * n))
        return y / Bs[..., :, None]

    def g(x: np.ndarray) -> np.ndarray:
        s, Bs = _scale(np.asarray(x, dtype=float))
        return B_mat / Bs[..., :, None]

    return PlantModel(
        name=name,
        n=n,
        p=n * n,
        q=B_mat.shape[1],
        f=f,
        g=g,
        theta_true=A_mat.reshape(-1),
        box=box,
    )


PLANTS: dict[str, Callable[[], PlantModel]] = {
    "two_state": make_two_state_plant,
    "robot": make_robot_plant,
    "counterexample": make_counterexample_plant,
}


def get_plant(name: str) -> PlantModel:
    try:
        return PLANTS[name]()
    except KeyError:
        raise ConfigError(f"unknown plant {name!r}; choose one of {sorted(PLANTS)}") from None
