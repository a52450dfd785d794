"""Benchmarking 3D off-road vehicle dynamics models over terrain.

Modules:

* :mod:`.core`      states, controls, vehicle parameters, quaternion helpers
* :mod:`.terrain`   elevation maps, height queries, contact projection, patches
* :mod:`.models`    NoSlip3D, Slip3D and the learned single-step models
* :mod:`.learn`     MLP forward/backward, feature layout, training
* :mod:`.rollout`   open-loop rollouts against recorded trajectories
* :mod:`.energy`    dynamic-limit checks and the free-energy score
* :mod:`.bench`     H-MNE metric, report tables and the error/energy trend
* :mod:`.dataio`    file formats, resampling, splits, synthetic data
"""

from .core import ControlInput, EulerAngles, Trajectory, VehicleParams, VehicleState
from .errors import DataError, NumericalError, OffroadError
from .models import ModelKind
from .terrain import ElevationMap, TerrainPatch

__version__ = "0.1.0"

__all__ = [
    "ControlInput",
    "DataError",
    "ElevationMap",
    "EulerAngles",
    "ModelKind",
    "NumericalError",
    "OffroadError",
    "TerrainPatch",
    "Trajectory",
    "VehicleParams",
    "VehicleState",
]
