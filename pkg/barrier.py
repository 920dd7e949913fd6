# barrier.py
"""
Barrier transformation between a box-constrained state x and an unconstrained
state s.

Each component uses the log-ratio map

    b(x) = log( A (a - x) / (a (A - x)) ),   a < 0 < A,

which sends (a, A) onto the real line with b(0) = 0. Its inverse and the
reciprocal Jacobian factor B(s) = 1 / (d b^-1 / ds) are provided alongside.
All maps work componentwise and broadcast over leading batch dimensions, so a
(..., n) array is transformed in one call.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

import config as cfg
from errors import DimensionMismatch, DomainError

__all__ = [
    "SafeBox",
    "bt_forward",
    "bt_inverse",
    "bt_derivative_factor",
    "derivative_factors",
]


@dataclass(frozen=True)
class SafeBox:
    """
    Per-dimension open interval (a_i, A_i) with a_i < 0 < A_i.

    Parameters
    ----------
    lower : sequence of float
        Lower bounds a_i (state units).
    upper : sequence of float
        Upper bounds A_i (state units).
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    a: np.ndarray = field(init=False, repr=False, compare=False)
    A: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        if len(lower) != len(upper) or not lower:
            raise DimensionMismatch(
                f"SafeBox needs equal, non-empty bound vectors (got {len(lower)} and {len(upper)})"
            )
        for i, (lo, hi) in enumerate(zip(lower, upper)):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < 0.0 < hi):
                raise DomainError(f"SafeBox dimension {i}: need a < 0 < A (got a={lo}, A={hi})")
        a = np.array(lower)
        A = np.array(upper)
        a.setflags(write=False)
        A.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "A", A)

    @property
    def n(self) -> int:
        return len(self.lower)

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        """True if every component of x lies strictly inside (a + tol, A - tol)."""
        x = np.asarray(x, dtype=float)
        return bool(np.all(np.isfinite(x)) and np.all(x > self.a + tol) and np.all(x < self.A - tol))


def _check_width(v: np.ndarray, box: SafeBox, what: str) -> None:
    if v.ndim == 0 or v.shape[-1] != box.n:
        raise DimensionMismatch(f"{what} has trailing dimension {v.shape[-1:] or '()'}; box has n={box.n}")


def bt_forward(x: Sequence[float] | np.ndarray, box: SafeBox) -> np.ndarray:
    """
    Map an original state x (..., n) strictly inside `box` to transformed s.

    Raises
    ------
    DomainError
        If any component is within BOUNDARY_TOL of, on, or beyond its bound.
        Boundary inputs are never clamped.
    """
    x = np.asarray(x, dtype=float)
    _check_width(x, box, "x")
    tol = cfg._get_cfg("BOUNDARY_TOL", 1e-12)
    bad = ~np.isfinite(x) | (x <= box.a + tol) | (x >= box.A - tol)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        raise DomainError(
            f"state component {int(idx[-1])} = {x[tuple(idx)]!r} outside "
            f"({box.a[idx[-1]]}, {box.A[idx[-1]]})"
        )
    # log(A(a-x) / (a(A-x))) = log(1 - x/a) - log(1 - x/A)
    return np.log1p(-x / box.a) - np.log1p(-x / box.A)


def bt_inverse(s: Sequence[float] | np.ndarray, box: SafeBox) -> np.ndarray:
    """
    Map transformed s (..., n) back to the original coordinates.

    The map is total on the reals; the exponentials are arranged so that only
    e^{-|s|} is ever formed, so large |s| saturates at the bound instead of
    overflowing.
    """
    s = np.asarray(s, dtype=float)
    _check_width(s, box, "s")
    if not np.all(np.isfinite(s)):
        raise DomainError("transformed state must be finite")
    a, A = box.a, box.A
    neg = s < 0.0
    e = np.exp(-np.abs(s))
    # s < 0: aA (e^s - 1) / (a e^s - A);  s >= 0: aA (1 - e^-s) / (a - A e^-s)
    num = np.where(neg, np.expm1(np.minimum(s, 0.0)), -np.expm1(-np.maximum(s, 0.0)))
    den = np.where(neg, a * e - A, a - A * e)
    return a * A * num / den


def derivative_factors(s: Sequence[float] | np.ndarray, box: SafeBox) -> np.ndarray:
    """
    B_i(s_i) for every component of s (..., n).

    B_i(s) = (a_i^2 e^s - 2 a_i A_i + A_i^2 e^-s) / (A_i a_i^2 - a_i A_i^2)
           = (a_i e^{s/2} - A_i e^{-s/2})^2 / (a_i A_i (a_i - A_i)),

    which is strictly positive because a_i < 0 < A_i.

    Raises
    ------
    OverflowError
        If any |s_i| exceeds EXP_LIMIT.
    """
    s = np.asarray(s, dtype=float)
    _check_width(s, box, "s")
    limit = cfg._get_cfg("EXP_LIMIT", 700.0)
    if not np.all(np.abs(s) <= limit):
        raise OverflowError(f"barrier factor overflow: |s| exceeds {limit}")
    a, A = box.a, box.A
    half = 0.5 * s
    return (a * np.exp(half) - A * np.exp(-half)) ** 2 / (a * A * (a - A))


def bt_derivative_factor(s: float, i: int, box: SafeBox) -> float:
    """Scalar B_i(s) for dimension i of `box`."""
    if not 0 <= i < box.n:
        raise DimensionMismatch(f"dimension index {i} out of range for n={box.n}")
    s = float(s)
    limit = cfg._get_cfg("EXP_LIMIT", 700.0)
    if not abs(s) <= limit:
        raise OverflowError(f"barrier factor overflow: |s| exceeds {limit}")
    a, A = box.a[i], box.A[i]
    return float((a * np.exp(0.5 * s) - A * np.exp(-0.5 * s)) ** 2 / (a * A * (a - A)))
