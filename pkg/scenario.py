# scenario.py
"""
Scenario configuration: the SimConfig record, nominal presets for the bundled
plants, YAML scenario files, `key=value` overrides, and atomic output writes.

Scenario files are flat YAML mappings whose keys are SimConfig field names.
Matrices may be written as a scalar (times identity), a diagonal list, or a
full nested list.
"""
from __future__ import annotations

import dataclasses
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Union

import numpy as np
import yaml

import config as cfg
from actor_critic import BasisSet, LearnerGains, make_basis
from barrier import SafeBox
from errors import ConfigError, DomainError
from plant import PlantModel, get_plant

__all__ = [
    "SimConfig",
    "default_config",
    "load_config",
    "resolve_scenario_path",
    "apply_overrides",
    "parse_override",
    "atomic_write_text",
    "step_counts",
    "GAIN_NAMES",
    "FALLBACKS",
    "COST_MODES",
]

GAIN_NAMES = ("k_c1", "k_c2", "k_a1", "k_a2", "beta", "gamma1")
FALLBACKS = ("initial_actor", "zero")
COST_MODES = ("learning", "replay")

_MATRIX_FIELDS = ("beta1", "Q", "R", "Gamma0")
_VECTOR_FIELDS = ("x0", "lower", "upper", "W_c0", "W_a0", "theta_hat0")
_FLOAT_FIELDS = ("y_f_bound", "extrap_half_width", "dt", "t_final", "sample_interval")


@dataclass(frozen=True, eq=False)
class SimConfig:
    """One closed-loop scenario. Arrays are stored as float numpy arrays."""

    plant: str
    x0: np.ndarray
    k_c1: float
    k_c2: float
    k_a1: float
    k_a2: float
    beta: float
    gamma1: float
    beta1: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    basis: str
    W_c0: np.ndarray
    W_a0: np.ndarray
    Gamma0: np.ndarray
    theta_hat0: np.ndarray
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    y_f_bound: float = cfg.Y_F_BOUND
    extrap_count: int = cfg.EXTRAP_COUNT
    extrap_half_width: float = cfg.EXTRAP_HALF_WIDTH
    seed: int = cfg.SEED
    dt: float = cfg.DT
    t_final: float = 10.0
    sample_interval: float = cfg.SAMPLE_INTERVAL
    fallback: str = "initial_actor"
    cost_mode: str = "learning"

    # ----- derived objects -------------------------------------------------

    def plant_model(self) -> PlantModel:
        return get_plant(self.plant)

    def safe_box(self, plant: Optional[PlantModel] = None) -> SafeBox:
        plant = plant or self.plant_model()
        lower = plant.box.lower if self.lower is None else tuple(self.lower)
        upper = plant.box.upper if self.upper is None else tuple(self.upper)
        return SafeBox(lower, upper)

    def basis_set(self, n: Optional[int] = None) -> BasisSet:
        return make_basis(self.basis, n if n is not None else self.plant_model().n)

    def gains(self) -> LearnerGains:
        return LearnerGains(self.k_c1, self.k_c2, self.k_a1, self.k_a2, self.beta, self.gamma1)

    def steps(self) -> tuple[int, int]:
        """(total integration steps, steps between logged samples)."""
        return step_counts(self.t_final, self.dt, self.sample_interval)

    # ----- validation ------------------------------------------------------

    def validate(self, plant: Optional[PlantModel] = None) -> "SimConfig":
        """Check shapes, definiteness and the initial condition; returns self."""
        plant = plant or self.plant_model()
        n, p, q = plant.n, plant.p, plant.q
        try:
            box = self.safe_box(plant)
        except (DomainError, ValueError) as e:
            raise ConfigError(f"invalid box: {e}") from None
        if box.n != n:
            raise ConfigError(f"box has {box.n} dimensions, plant {plant.name!r} has {n}")
        basis = self.basis_set(n)
        L = basis.L

        _expect_shape("x0", self.x0, (n,))
        _expect_shape("theta_hat0", self.theta_hat0, (p,))
        _expect_shape("W_c0", self.W_c0, (L,))
        _expect_shape("W_a0", self.W_a0, (L,))
        for name, size in (("Q", n), ("R", q), ("beta1", p), ("Gamma0", L)):
            _expect_spd(name, getattr(self, name), size)

        if not box.contains(self.x0, tol=cfg._get_cfg("BOUNDARY_TOL", 1e-12)):
            raise ConfigError(f"x0 = {self.x0.tolist()} is not strictly inside the safe box {box.lower}..{box.upper}")
        for name in GAIN_NAMES:
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ConfigError(f"gain {name} must be finite and non-negative (got {value})")
        if not float(self.y_f_bound) > 0:
            raise ConfigError("y_f_bound must be positive")
        if self.extrap_count < 1:
            raise ConfigError("extrap_count must be >= 1")
        if not self.extrap_half_width > 0:
            raise ConfigError("extrap_half_width must be positive")
        if not (self.dt > 0 and self.t_final > 0 and self.sample_interval > 0):
            raise ConfigError("dt, t_final and sample_interval must be positive")
        if self.sample_interval < self.dt:
            raise ConfigError("sample_interval must be at least dt")
        if self.fallback not in FALLBACKS:
            raise ConfigError(f"fallback must be one of {FALLBACKS}")
        if self.cost_mode not in COST_MODES:
            raise ConfigError(f"cost_mode must be one of {COST_MODES}")
        return self

    # ----- conversion ------------------------------------------------------

    def to_mapping(self) -> dict[str, Any]:
        """Plain-python mapping (lists, floats) suitable for YAML/JSON."""
        out: dict[str, Any] = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "SimConfig":
        """
        Build a config from a (possibly partial) mapping. Missing keys come
        from the nominal preset of data['plant'].
        """
        if "plant" not in data:
            raise ConfigError("scenario must name a 'plant'")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown scenario keys: {unknown}")
        base = default_config(str(data["plant"])).to_mapping()
        base.update(data)
        return cls._coerce(base)

    @classmethod
    def _coerce(cls, data: Mapping[str, Any]) -> "SimConfig":
        plant = get_plant(str(data["plant"]))
        basis_name = str(data["basis"])
        L = make_basis(basis_name, plant.n).L
        sizes = {"beta1": plant.p, "Q": plant.n, "R": plant.q, "Gamma0": L}
        kwargs: dict[str, Any] = {}
        try:
            for f in dataclasses.fields(cls):
                v = data.get(f.name, None)
                if f.name in _MATRIX_FIELDS:
                    v = _matrix(f.name, v, sizes[f.name])
                elif f.name in _VECTOR_FIELDS:
                    v = None if v is None else np.atleast_1d(np.asarray(v, dtype=float))
                elif f.name in GAIN_NAMES or f.name in _FLOAT_FIELDS:
                    v = float(v)
                elif f.name in ("extrap_count", "seed"):
                    v = int(v)
                else:
                    v = str(v)
                kwargs[f.name] = v
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid scenario value: {e}") from None
        return cls(**kwargs)


def _expect_shape(name: str, v: np.ndarray, shape: tuple[int, ...]) -> None:
    if v is None or v.shape != shape:
        raise ConfigError(f"{name} must have shape {shape} (got {None if v is None else v.shape})")


def _expect_spd(name: str, m: np.ndarray, size: int) -> None:
    if m.shape != (size, size):
        raise ConfigError(f"{name} must be {size}x{size} (got {m.shape})")
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-12):
        raise ConfigError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(m)[0] <= 0:
        raise ConfigError(f"{name} must be positive definite")


def _matrix(name: str, v: Any, size: int) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(size)
    if arr.ndim == 1:
        if arr.shape[0] != size:
            raise ConfigError(f"{name}: diagonal has {arr.shape[0]} entries, expected {size}")
        return np.diag(arr)
    return arr


# ---------------------------------------------------------------------------
# Nominal presets
# ---------------------------------------------------------------------------

def default_config(plant: str) -> SimConfig:
    """Nominal scenario for a bundled plant (gains, initial guesses, horizon)."""
    if plant == "two_state":
        return SimConfig(
            plant="two_state",
            x0=np.array([-6.5, 6.5]),
            k_c1=0.3, k_c2=5.0, k_a1=180.0, k_a2=0.0001, beta=0.03, gamma1=0.5,
            beta1=np.diag([50.0] * 4),
            Q=np.diag([10.0, 10.0]),
            R=np.array([[0.1]]),
            basis="two_state_quadratic",
            W_c0=np.array([0.5, 0.5, 0.5]),
            W_a0=np.array([0.5, 0.5, 0.5]),
            Gamma0=np.eye(3),
            theta_hat0=np.zeros(4),
            t_final=10.0,
        )
    if plant == "robot":
        w0 = np.array([60.0, 2.0, 2.0, 2.0, 2.0, 2.0, 40.0, 2.0, 2.0, 2.0])
        return SimConfig(
            plant="robot",
            x0=np.array([-5.0, -5.0, 5.0, 5.0]),
            k_c1=0.1, k_c2=10.0, k_a1=20.0, k_a2=0.2, beta=0.8, gamma1=100.0,
            beta1=np.diag([100.0] * 4),
            Q=np.eye(4),
            R=np.eye(2),
            basis="robot_quadratic",
            W_c0=w0.copy(),
            W_a0=w0.copy(),
            Gamma0=10.0 * np.eye(10),
            theta_hat0=np.full(4, 5.0),
            t_final=20.0,
        )
    if plant == "counterexample":
        return SimConfig(
            plant="counterexample",
            x0=np.array([0.25]),
            k_c1=0.3, k_c2=5.0, k_a1=180.0, k_a2=0.0001, beta=0.03, gamma1=0.5,
            beta1=np.eye(1),
            Q=np.eye(1),
            R=np.eye(1),
            basis="quadratic",
            W_c0=np.zeros(1),
            W_a0=np.zeros(1),
            Gamma0=np.eye(1),
            theta_hat0=np.zeros(1),
            extrap_count=1,
            dt=1e-3,
            t_final=5.0,
            sample_interval=1e-2,
        )
    raise ConfigError(f"no nominal scenario for plant {plant!r}")


# ---------------------------------------------------------------------------
# Files and overrides
# ---------------------------------------------------------------------------

def resolve_scenario_path(spec: Union[str, Path]) -> Path:
    """A path to a scenario file, or the name of a bundled one ('two_state')."""
    path = Path(spec)
    if path.exists():
        return path
    bundled = Path(__file__).resolve().parent / cfg._get_cfg("SCENARIO_DIR", "scenarios") / f"{spec}.yaml"
    if bundled.exists():
        return bundled
    raise ConfigError(f"scenario file not found: {spec}")


def load_config(spec: Union[str, Path]) -> SimConfig:
    path = resolve_scenario_path(spec)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: not valid YAML ({e})") from None
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: expected a mapping of SimConfig keys")
    return SimConfig.from_mapping(data).validate()


def parse_override(item: str) -> tuple[str, Any]:
    """
    'key=value' -> (key, value). Values use YAML scalar/list syntax; bare
    exponent floats such as 1e-3 are accepted too.
    """
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        value = raw
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            pass
    return key, value


def apply_overrides(config: SimConfig, overrides: Iterable[Union[str, tuple[str, Any]]]) -> SimConfig:
    data = config.to_mapping()
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        if key == "v":
            key = "gamma1"
        if key not in data:
            raise ConfigError(f"unknown override key {key!r}")
        data[key] = value
    return SimConfig.from_mapping(data).validate()


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    """Write `text` through a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
    return path


def step_counts(t_final: float, dt: float, sample_interval: float) -> tuple[int, int]:
    """(total integration steps, steps between logged samples)."""
    n_steps = int(round(t_final / dt))
    every = max(1, int(round(sample_interval / dt)))
    return n_steps, every
