# tests/conftest.py
import dataclasses
import os
import sys

import numpy as np
import pytest

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from plant import PlantModel, make_linear_toy_plant, make_robot_plant, make_two_state_plant  # noqa: E402
from barrier import SafeBox  # noqa: E402
from scenario import default_config  # noqa: E402


def desk(config, **changes):
    """Coarse-step, short-horizon variant of a scenario."""
    base = dict(dt=1e-3, t_final=0.3, sample_interval=1e-2, extrap_count=8)
    base.update(changes)
    return dataclasses.replace(config, **base).validate()


@pytest.fixture
def two_state_plant():
    return make_two_state_plant()


@pytest.fixture
def robot_plant():
    return make_robot_plant()


@pytest.fixture
def two_state_config():
    return default_config("two_state")


@pytest.fixture
def robot_config():
    return default_config("robot")


@pytest.fixture
def two_state_desk():
    return desk(default_config("two_state"))


@pytest.fixture
def robot_desk():
    return desk(default_config("robot"), t_final=0.2)


@pytest.fixture
def scalar_config():
    """One-dimensional scenario shell for hand-built scalar plants."""
    return dataclasses.replace(
        default_config("counterexample"), dt=1e-3, t_final=1.0, sample_interval=0.1
    )


@pytest.fixture
def decay_plant():
    """s' = -s + u, exactly linear in transformed coordinates."""
    return make_linear_toy_plant(np.array([[-1.0]]), np.array([[1.0]]))


@pytest.fixture
def still_plant():
    """f = 0, g = 0: nothing moves."""
    return PlantModel(
        name="still",
        n=1,
        p=1,
        q=1,
        f=lambda x: np.zeros(np.shape(x) + (1,)),
        g=lambda x: np.zeros(np.shape(x) + (1,)),
        theta_true=np.array([1.0]),
        box=SafeBox((-1.0,), (2.0,)),
    )


@pytest.fixture
def make_desk():
    return desk
