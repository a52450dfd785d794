"""Single-step dynamics models: no-slip bicycle, slip bicycle, learned MLP.

All three share one contract: given the current state and command, return the
body-frame rates at the next step as a :class:`BodyRates`. Position,
orientation and terrain contact are handled by :mod:`offroad_bench.rollout`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .core import (
    DEFAULT_DT,
    ControlInput,
    EulerAngles,
    VehicleParams,
    VehicleState,
    body_acceleration,
)
from .errors import NonPhysicalParams

if TYPE_CHECKING:
    from .learn import MLPWeights
    from .terrain import TerrainPatch

# floor on |V_x| in slip-angle denominators
MIN_SLIP_SPEED = 0.1


class ModelKind(str, enum.Enum):
    NOSLIP3D = "noslip3d"
    SLIP3D = "slip3d"
    LEARNED = "learned"

    @property
    def label(self) -> str:
        return {"noslip3d": "NoSlip3D", "slip3d": "Slip3D", "learned": "Learned"}[self.value]

    @classmethod
    def parse(cls, text: str) -> "ModelKind":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown model {text!r}; expected one of {[m.value for m in cls]}")


@dataclass(frozen=True, eq=False)
class BodyRates:
    velocity: np.ndarray
    angular_velocity: np.ndarray
    acceleration: np.ndarray


@dataclass(frozen=True)
class TireForces:
    fx_front: float
    fy_front: float
    fx_rear: float
    fy_rear: float


@dataclass(frozen=True, eq=False)
class SlipForces:
    """Everything the slip model assembles before integrating."""

    tires: TireForces
    body_force: np.ndarray  # F^b_x, F^b_y, F^b_z
    yaw_acceleration: float
    slip_angles: tuple[float, float]
    normal_loads: tuple[float, float]


def clamp_steering(delta: float, params: VehicleParams) -> float:
    return max(-params.max_steer, min(params.max_steer, delta))


def noslip_step(
    state: VehicleState, u: ControlInput, params: VehicleParams, dt: float = DEFAULT_DT
) -> BodyRates:
    """Kinematic bicycle: body velocity snaps to wheel speed, yaw rate from steering."""
    delta = clamp_steering(u.steering, params)
    v = np.array([u.wheel_speed, 0.0, 0.0])
    omega = np.array([0.0, 0.0, u.wheel_speed * math.tan(delta) / params.wheelbase])
    acc = body_acceleration(
        state.orientation, state.body_velocity, state.body_angular_velocity, v, dt, params.gravity
    )
    return BodyRates(v, omega, acc)


def _pacejka(slip: float, load: float, params: VehicleParams) -> float:
    return params.friction * load * math.sin(params.tire_shape * math.atan(params.tire_stiffness * slip))


def friction_limit(fx: float, fy: float, limit: float) -> tuple[float, float]:
    """Scale ``(fx, fy)`` onto the friction circle of radius ``limit`` if it lies outside."""
    mag = math.hypot(fx, fy)
    if mag > limit and mag > 0.0:
        s = limit / mag
        return fx * s, fy * s
    return fx, fy


def tire_force(
    slip_angle: float, slip_ratio: float, normal_load: float, params: VehicleParams
) -> tuple[float, float]:
    """Simplified Pacejka force ``mu*Fz*sin(C*atan(B*s))`` for both directions.

    The lateral force opposes the slip angle. The combined force is clipped to
    ``mu * Fz``.
    """
    if normal_load < 0:
        raise NonPhysicalParams(f"negative normal load {normal_load}")
    fx = _pacejka(slip_ratio, normal_load, params)
    fy = -_pacejka(slip_angle, normal_load, params)
    return friction_limit(fx, fy, params.friction * normal_load)


def static_axle_loads(params: VehicleParams) -> tuple[float, float]:
    w = params.mass * params.gravity
    front = w * params.rear_axle_distance / params.wheelbase
    rear = w * params.front_axle_distance / params.wheelbase
    if front < 0 or rear < 0:
        raise NonPhysicalParams("static axle load split gives a negative normal load")
    return front, rear


def slip_forces(
    state: VehicleState, u: ControlInput, params: VehicleParams, attitude: EulerAngles
) -> SlipForces:
    """Tire and body forces of the slip bicycle at ``state``.

    Lateral forces come from :func:`tire_force` on the axle slip angles. The
    longitudinal force tracks the commanded wheel speed,
    ``K_d * m * (V_w - V_x)``, shared between axles in proportion to their
    static load and clipped together with the lateral force to the friction
    circle. Gravity enters through the ``m g sin(pitch)`` / ``m g sin(roll)``
    terms exactly as in the single-track formulation.
    """
    m, g = params.mass, params.gravity
    lf, lr = params.front_axle_distance, params.rear_axle_distance
    vx, vy, _ = state.body_velocity
    wx, wy, wz = state.body_angular_velocity
    delta = clamp_steering(u.steering, params)

    fzf, fzr = static_axle_loads(params)
    vx_den = max(abs(vx), MIN_SLIP_SPEED)
    alpha_f = math.atan((vy + wz * lf) / vx_den) - delta
    alpha_r = math.atan((vy - wz * lr) / vx_den)

    drive = params.drive_gain * m * (u.wheel_speed - vx)
    share_f = fzf / (fzf + fzr)
    _, fyf = tire_force(alpha_f, 0.0, fzf, params)
    _, fyr = tire_force(alpha_r, 0.0, fzr, params)
    fxf, fyf = friction_limit(drive * share_f, fyf, params.friction * fzf)
    fxr, fyr = friction_limit(drive * (1.0 - share_f), fyr, params.friction * fzr)

    sd, cd = math.sin(delta), math.cos(delta)
    cos_beta = math.cos(attitude.roll) * math.cos(attitude.pitch)
    fbx = fxr + fxf * cd - fyf * sd + m * g * math.sin(attitude.pitch)
    fby = fyr + fyf * cd + fxf * sd + m * g * math.sin(attitude.roll)
    fbz = m * (g * cos_beta - vx * wy + vy * wx)
    wz_dot = ((fxf * sd + fyf * cd) * lf - fyr * lr) / params.yaw_inertia
    return SlipForces(
        TireForces(fxf, fyf, fxr, fyr),
        np.array([fbx, fby, fbz]),
        wz_dot,
        (alpha_f, alpha_r),
        (fzf, fzr),
    )


def slip_step(
    state: VehicleState,
    u: ControlInput,
    params: VehicleParams,
    terrain_attitude: EulerAngles,
    dt: float = DEFAULT_DT,
) -> BodyRates:
    """One explicit-Euler step of the slip bicycle.

    Planar body velocity obeys ``dV/dt = F/m - omega_z x V``; the vertical body
    velocity and the roll/pitch rates are left to terrain contact.
    """
    f = slip_forces(state, u, params, terrain_attitude)
    m = params.mass
    vx, vy, vz = state.body_velocity
    wx, wy, wz = state.body_angular_velocity
    ax = f.body_force[0] / m + wz * vy
    ay = f.body_force[1] / m - wz * vx
    v = np.array([vx + ax * dt, vy + ay * dt, vz])
    omega = np.array([wx, wy, wz + f.yaw_acceleration * dt])
    acc = body_acceleration(
        state.orientation, state.body_velocity, state.body_angular_velocity, v, dt, params.gravity
    )
    return BodyRates(v, omega, acc)


def learned_step(
    state: VehicleState,
    u: ControlInput,
    patch: "TerrainPatch",
    weights: "MLPWeights",
    dt: float = DEFAULT_DT,
    gravity: float = 9.81,
) -> BodyRates:
    """Add the network's predicted (dV, domega) to the current body rates."""
    from .learn import featurize, predict_delta

    x = featurize(state, u, patch, weights.input_stats)
    delta = predict_delta(weights, x)
    v = state.body_velocity + delta[:3]
    omega = state.body_angular_velocity + delta[3:]
    acc = body_acceleration(
        state.orientation, state.body_velocity, state.body_angular_velocity, v, dt, gravity
    )
    return BodyRates(v, omega, acc)
