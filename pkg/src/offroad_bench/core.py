"""Domain types and rotation math shared by every other module.

Conventions
-----------
* Quaternions are ``[w, x, y, z]`` numpy arrays and rotate body vectors into
  the world frame (world <- body).
* Euler angles use the ZYX intrinsic sequence: ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
  With the world z axis pointing up, a positive pitch puts the nose *down*.
* Body frame: x forward, y left, z up.
* Body acceleration follows the IMU bookkeeping used everywhere in the package::

      a_b = (V_next - V) / dt + omega x V + R^T @ (0, 0, g)

  so a vehicle resting on flat ground reads ``(0, 0, g)``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

TWO_PI = 2.0 * math.pi
DEFAULT_DT = 0.1
GRAVITY = 9.81


def wrap_angle(a: float) -> float:
    """Wrap an angle into ``(-pi, pi]``. Angles already in range come back untouched."""
    a = float(a)
    if -math.pi < a <= math.pi:
        return a
    return math.pi - ((math.pi - a) % TWO_PI)


def wrap_angles(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    out = np.pi - np.mod(np.pi - a, TWO_PI)
    inside = (a > -np.pi) & (a <= np.pi)
    return np.where(inside, a, out)


@dataclass(frozen=True)
class EulerAngles:
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        for name in ("roll", "pitch", "yaw"):
            object.__setattr__(self, name, wrap_angle(getattr(self, name)))


# ---------------------------------------------------------------------------
# quaternion helpers


def quat_multiply(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Hamilton product ``p (x) q``."""
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return np.array(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = math.sqrt(float(q @ q))
    if n == 0.0:
        raise DataError("zero-norm quaternion")
    return q / n


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate a body-frame vector into the world frame."""
    return quat_to_matrix(q) @ np.asarray(v, dtype=float)


def quat_from_axis_angle(rotvec: np.ndarray) -> np.ndarray:
    rotvec = np.asarray(rotvec, dtype=float)
    angle = math.sqrt(float(rotvec @ rotvec))
    if angle == 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * angle
    s = math.sin(half) / angle
    return np.array([math.cos(half), rotvec[0] * s, rotvec[1] * s, rotvec[2] * s])


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    """Rotation vector (axis * angle) of ``q``, shortest path."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0.0:
        q = -q
    s = math.sqrt(float(q[1:] @ q[1:]))
    if s < 1e-12:
        # small-angle limit of 2*atan2(s, w)/s
        return 2.0 * q[1:] / q[0]
    angle = 2.0 * math.atan2(s, q[0])
    return q[1:] * (angle / s)


def quat_from_euler(e: EulerAngles) -> np.ndarray:
    """Unit quaternion for ZYX intrinsic angles (yaw, then pitch, then roll)."""
    cr, sr = math.cos(0.5 * e.roll), math.sin(0.5 * e.roll)
    cp, sp = math.cos(0.5 * e.pitch), math.sin(0.5 * e.pitch)
    cy, sy = math.cos(0.5 * e.yaw), math.sin(0.5 * e.yaw)
    q = np.array(
        [
            cy * cp * cr + sy * sp * sr,
            cy * cp * sr - sy * sp * cr,
            cy * sp * cr + sy * cp * sr,
            sy * cp * cr - cy * sp * sr,
        ]
    )
    return q / math.sqrt(float(q @ q))


def euler_from_quat(q: np.ndarray) -> EulerAngles:
    w, x, y, z = q
    roll = math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    sinp = max(-1.0, min(1.0, 2.0 * (w * y - z * x)))
    pitch = math.asin(sinp)
    yaw = math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    return EulerAngles(roll, pitch, yaw)


def integrate_orientation(q: np.ndarray, omega_b: np.ndarray, dt: float) -> np.ndarray:
    """Advance orientation by a constant body rate over ``dt`` (exponential map)."""
    if dt <= 0:
        raise DataError(f"dt must be positive, got {dt}")
    omega_b = np.asarray(omega_b, dtype=float)
    if not omega_b.any():
        return np.array(q, dtype=float)
    dq = quat_from_axis_angle(omega_b * dt)
    out = quat_multiply(np.asarray(q, dtype=float), dq)
    return out / math.sqrt(float(out @ out))


def body_acceleration(
    q: np.ndarray,
    velocity: np.ndarray,
    omega: np.ndarray,
    next_velocity: np.ndarray,
    dt: float,
    g: float = GRAVITY,
) -> np.ndarray:
    """IMU-style body acceleration over one step starting at ``(q, velocity, omega)``."""
    R = quat_to_matrix(q)
    return (
        (np.asarray(next_velocity) - velocity) / dt
        + np.cross(omega, velocity)
        + R.T @ np.array([0.0, 0.0, g])
    )


# ---------------------------------------------------------------------------
# domain types


def _vec(v, n: int, name: str) -> np.ndarray:
    arr = np.array(v, dtype=float).reshape(-1)
    if arr.shape != (n,):
        raise DataError(f"{name} must have {n} entries, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class VehicleState:
    time: float = 0.0
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    body_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    body_angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    body_acceleration: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, GRAVITY]))

    def __post_init__(self):
        object.__setattr__(self, "time", float(self.time))
        object.__setattr__(self, "position", _vec(self.position, 3, "position"))
        q = _vec(self.orientation, 4, "orientation")
        if abs(math.sqrt(float(q @ q)) - 1.0) > 1e-9:
            raise DataError("orientation must be a unit quaternion")
        object.__setattr__(self, "orientation", q)
        object.__setattr__(self, "body_velocity", _vec(self.body_velocity, 3, "body_velocity"))
        object.__setattr__(
            self, "body_angular_velocity", _vec(self.body_angular_velocity, 3, "body_angular_velocity")
        )
        object.__setattr__(
            self, "body_acceleration", _vec(self.body_acceleration, 3, "body_acceleration")
        )

    @property
    def euler(self) -> EulerAngles:
        return euler_from_quat(self.orientation)

    def as_vector(self) -> np.ndarray:
        return np.concatenate(
            [
                [self.time],
                self.position,
                self.orientation,
                self.body_velocity,
                self.body_angular_velocity,
                self.body_acceleration,
            ]
        )


@dataclass(frozen=True)
class ControlInput:
    steering: float = 0.0
    wheel_speed: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.steering) and math.isfinite(self.wheel_speed)):
            raise DataError("controls must be finite")


@dataclass(frozen=True)
class VehicleParams:
    mass: float = 1000.0
    yaw_inertia: float = 1200.0
    front_axle_distance: float = 1.3
    rear_axle_distance: float = 1.3
    wheelbase: float | None = None
    gravity: float = GRAVITY
    tire_stiffness: float = 4.0
    tire_shape: float = 1.5
    friction: float = 0.8
    drive_gain: float = 1.0
    max_steer: float = 0.6

    def __post_init__(self):
        if self.wheelbase is None:
            object.__setattr__(
                self, "wheelbase", self.front_axle_distance + self.rear_axle_distance
            )
        positive = (
            "mass", "yaw_inertia", "front_axle_distance", "rear_axle_distance", "gravity",
            "tire_stiffness", "tire_shape", "friction", "drive_gain", "max_steer",
        )
        for name in positive:
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DataError(f"VehicleParams.{name} must be positive and finite, got {v}")
        if abs(self.wheelbase - self.front_axle_distance - self.rear_axle_distance) > 1e-9:
            raise DataError("wheelbase must equal front_axle_distance + rear_axle_distance")
        if self.max_steer >= math.pi / 2:
            raise DataError("max_steer must be below pi/2")

    def replace(self, **changes) -> "VehicleParams":
        if "wheelbase" not in changes and {"front_axle_distance", "rear_axle_distance"} & changes.keys():
            changes["wheelbase"] = None
        return dataclasses.replace(self, **changes)


class Trajectory:
    """Fixed-step sequence of states and controls, stored column-wise.

    ``controls[i]`` is the command applied from ``states[i]`` to
    ``states[i + 1]``; the final control is carried along but never used by a
    rollout.
    """

    __slots__ = (
        "dt", "times", "positions", "orientations", "velocities",
        "angular_velocities", "accelerations", "steering", "wheel_speed",
    )

    def __init__(
        self,
        times,
        positions,
        orientations,
        velocities,
        angular_velocities,
        accelerations,
        steering,
        wheel_speed,
        dt: float = DEFAULT_DT,
    ):
        self.dt = float(dt)
        self.times = np.array(times, dtype=float).reshape(-1)
        n = self.times.size
        self.positions = np.array(positions, dtype=float).reshape(n, 3)
        self.orientations = np.array(orientations, dtype=float).reshape(n, 4)
        self.velocities = np.array(velocities, dtype=float).reshape(n, 3)
        self.angular_velocities = np.array(angular_velocities, dtype=float).reshape(n, 3)
        self.accelerations = np.array(accelerations, dtype=float).reshape(n, 3)
        self.steering = np.array(steering, dtype=float).reshape(n)
        self.wheel_speed = np.array(wheel_speed, dtype=float).reshape(n)
        self._validate()
        for name in self.__slots__[1:]:
            getattr(self, name).setflags(write=False)

    def _validate(self):
        n = len(self)
        if n < 2:
            raise DataError(f"trajectory needs at least 2 states, got {n}")
        if not self.dt > 0:
            raise DataError("dt must be positive")
        steps = np.diff(self.times)
        if np.any(np.abs(steps - self.dt) > 1e-9):
            raise DataError("timestamps must be spaced by dt")
        for name in self.__slots__[1:]:
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataError(f"trajectory {name} has non-finite entries")
        norms = np.linalg.norm(self.orientations, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise DataError("orientations must be unit quaternions")

    @classmethod
    def from_states(
        cls,
        states: Sequence[VehicleState],
        controls: Sequence[ControlInput],
        dt: float = DEFAULT_DT,
    ) -> "Trajectory":
        if len(states) != len(controls):
            raise DataError("states and controls must have the same length")
        return cls(
            [s.time for s in states],
            [s.position for s in states],
            [s.orientation for s in states],
            [s.body_velocity for s in states],
            [s.body_angular_velocity for s in states],
            [s.body_acceleration for s in states],
            [c.steering for c in controls],
            [c.wheel_speed for c in controls],
            dt=dt,
        )

    def __len__(self) -> int:
        return self.times.size

    @property
    def horizon(self) -> int:
        return len(self) - 1

    def state(self, i: int) -> VehicleState:
        return VehicleState(
            self.times[i],
            self.positions[i],
            self.orientations[i],
            self.velocities[i],
            self.angular_velocities[i],
            self.accelerations[i],
        )

    def control(self, i: int) -> ControlInput:
        return ControlInput(float(self.steering[i]), float(self.wheel_speed[i]))

    @property
    def states(self) -> list[VehicleState]:
        return [self.state(i) for i in range(len(self))]

    @property
    def controls(self) -> list[ControlInput]:
        return [self.control(i) for i in range(len(self))]

    def euler_angles(self) -> np.ndarray:
        """(N, 3) array of roll, pitch, yaw."""
        out = np.empty((len(self), 3))
        for i, q in enumerate(self.orientations):
            e = euler_from_quat(q)
            out[i] = (e.roll, e.pitch, e.yaw)
        return out

    def slice(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(
            self.times[start:stop],
            self.positions[start:stop],
            self.orientations[start:stop],
            self.velocities[start:stop],
            self.angular_velocities[start:stop],
            self.accelerations[start:stop],
            self.steering[start:stop],
            self.wheel_speed[start:stop],
            dt=self.dt,
        )

    def with_columns(self, **columns) -> "Trajectory":
        """Copy with some columns replaced (e.g. ``accelerations=...``)."""
        values = {name: getattr(self, name) for name in self.__slots__[1:]}
        values.update(columns)
        return Trajectory(dt=self.dt, **values)

    def equals(self, other: "Trajectory") -> bool:
        """Bitwise equality of every column."""
        if self.dt != other.dt or len(self) != len(other):
            return False
        return all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in self.__slots__[1:]
        )


def concatenate(parts: Iterable[Trajectory]) -> Trajectory:
    """Join consecutive chunks that share their boundary state."""
    parts = list(parts)
    if not parts:
        raise DataError("nothing to concatenate")
    first = parts[0]
    cols = {name: [getattr(first, name)] for name in Trajectory.__slots__[1:]}
    for p in parts[1:]:
        for name in cols:
            cols[name].append(getattr(p, name)[1:])
    return Trajectory(dt=first.dt, **{k: np.concatenate(v) for k, v in cols.items()})
