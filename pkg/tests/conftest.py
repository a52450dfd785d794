import math

import numpy as np
import pytest

from offroad_bench.core import GRAVITY, Trajectory, quat_from_euler, EulerAngles
from offroad_bench.dataio import SyntheticConfig, generate_synthetic


def make_trajectory(n=5, dt=0.1, rng=None, **columns) -> Trajectory:
    """Small valid trajectory; any column may be overridden."""
    rng = rng if rng is not None else np.random.default_rng(0)
    cols = dict(
        times=np.arange(n) * dt,
        positions=rng.normal(size=(n, 3)),
        orientations=np.array(
            [quat_from_euler(EulerAngles(*rng.uniform(-0.3, 0.3, 2), rng.uniform(-math.pi, math.pi))) for _ in range(n)]
        ),
        velocities=rng.normal(size=(n, 3)),
        angular_velocities=rng.normal(size=(n, 3)) * 0.2,
        accelerations=rng.normal(size=(n, 3)) + [0, 0, GRAVITY],
        steering=rng.uniform(-0.3, 0.3, n),
        wheel_speed=rng.uniform(5, 9, n),
    )
    cols.update(columns)
    return Trajectory(dt=dt, **cols)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    """Noiseless Slip3D data: 8 short trajectories."""
    return generate_synthetic(7, SyntheticConfig(count=8, horizon_s=2.0))
