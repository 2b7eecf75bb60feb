import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from world import Bounds, LineWorld, Pose, SensorSpec, rectangle_segments  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long end-to-end episode sweeps (deselect with -m 'not slow')")


def random_convex(rng: np.random.Generator, center, radius: float, sides: int | None = None) -> np.ndarray:
    """Convex polygon with vertices on a circle at sorted random angles."""
    sides = sides or int(rng.integers(3, 8))
    angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, sides))
    return np.column_stack((center[0] + radius * np.cos(angles), center[1] + radius * np.sin(angles)))


def cluttered_room(seed: int, n_objects: int = 5, size: float = 10.0, keep_clear=(5.0, 5.0)) -> LineWorld:
    """Walled square room with random convex furniture, leaving a disc around ``keep_clear`` empty."""
    rng = np.random.default_rng(seed)
    objects = []
    while len(objects) < n_objects:
        r = rng.uniform(0.3, 1.0)
        c = rng.uniform(r + 0.2, size - r - 0.2, 2)
        if np.hypot(*(c - np.asarray(keep_clear))) < r + 0.8:
            continue
        objects.append(random_convex(rng, c, r))
    return LineWorld(
        Bounds(0.0, 0.0, size, size),
        rectangle_segments(0.0, 0.0, size, size),
        tuple(objects),
        (),
        Pose(keep_clear[0], keep_clear[1], 0.0),
    )


@pytest.fixture
def square_room() -> LineWorld:
    return LineWorld(Bounds(0.0, 0.0, 10.0, 10.0), rectangle_segments(0.0, 0.0, 10.0, 10.0))


@pytest.fixture
def small_spec() -> SensorSpec:
    return SensorSpec(n_beams=64, lidar_noise_sigma=0.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
