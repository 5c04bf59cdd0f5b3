import numpy as np
import pytest

from segdrive.classes import ClassId
from segdrive.env import DriveEnv, EnvConfig
from segdrive.render import CameraModel
from segdrive.world import Obstacle, flat_world

EMPTY_DENSITIES = {ClassId.TREES: 0.0, ClassId.ROCKS: 0.0, ClassId.LOGS: 0.0}


@pytest.fixture
def flat60():
    return flat_world(extent=60.0, grid_resolution=0.5)


@pytest.fixture
def rock_world():
    """Flat world with one rock well away from the center start clearing."""
    return flat_world(extent=60.0, grid_resolution=0.5,
                      obstacles=[Obstacle(ClassId.ROCKS, 40.0, 30.0, 1.0, 1.0)])


def tiny_env(max_decisions=6, **overrides) -> DriveEnv:
    """Small, fast env on empty flat meadows; 16x16 camera."""
    kw = dict(
        presets=("meadow",),
        obstacle_density=dict(EMPTY_DENSITIES),
        camera=CameraModel(resolution=16, max_range=60.0),
        max_decisions=max_decisions,
        goal_range=15.0,
    )
    kw.update(overrides)
    return DriveEnv(EnvConfig(**kw))


@pytest.fixture
def env16():
    return tiny_env()


def assert_same_array(a: np.ndarray, b: np.ndarray):
    assert a.dtype == b.dtype and a.shape == b.shape
    assert np.array_equal(a, b)
