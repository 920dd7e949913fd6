# errors.py
from __future__ import annotations

from typing import TYPE_CHECKING, Optional

import numpy as np

if TYPE_CHECKING:
    from simulator import Trajectory


class DomainError(ValueError):
    """A state component sits on or outside its barrier interval."""


class DimensionMismatch(ValueError):
    pass


class ConfigError(ValueError):
    pass


class SingularMassMatrix(np.linalg.LinAlgError):
    pass


class SingularR(np.linalg.LinAlgError):
    pass


class NonPDGamma(np.linalg.LinAlgError):
    """The least-squares gain lost positive-definiteness beyond repair."""


class SimulationError(RuntimeError):
    """
    A closed-loop run stopped early.

    `t` is the time of the last accepted step and `trajectory` holds the
    samples logged up to that point (attached by the simulator).
    """

    def __init__(self, message: str, t: float = float("nan"), trajectory: Optional["Trajectory"] = None):
        super().__init__(message)
        self.t = t
        self.trajectory = trajectory


class SafetyViolation(SimulationError):
    pass


class NumericalDivergence(SimulationError):
    pass
