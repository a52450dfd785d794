"""Open-loop rollouts of a dynamics model against a recorded trajectory.

Each step asks the model for the next body rates and then applies the
kinematic layer:

* position advances by ``R(q_t) @ V_{t+1} * dt``;
* ground-contact models (NoSlip3D, Slip3D) integrate only the yaw rate, then
  re-project height, roll and pitch from the terrain; their stored roll/pitch
  rates are recovered from the resulting attitude change;
* the learned model integrates its own predicted rates and only sees terrain
  through the height patch.

Body acceleration is always ``(V_{t+1} - V_t)/dt + omega_t x V_t + R_t^T g``
so every model is scored on the same footing.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    ControlInput,
    Trajectory,
    VehicleParams,
    VehicleState,
    body_acceleration,
    euler_from_quat,
    integrate_orientation,
    quat_conjugate,
    quat_multiply,
    quat_to_matrix,
    quat_to_rotvec,
)
from .errors import DataError, OffroadError, ShapeMismatch
from .models import ModelKind, learned_step, noslip_step, slip_step
from .terrain import ElevationMap, extract_patch, project_pose


@dataclass(frozen=True)
class ContactConfig:
    """Terrain-contact geometry that the single-track models do not carry."""

    track_width: float = 1.5
    clearance: float = 0.0


@dataclass(frozen=True, eq=False)
class RolloutResult:
    predicted: Trajectory
    model: ModelKind
    source_id: str = ""


def advance(
    model: ModelKind,
    state: VehicleState,
    u: ControlInput,
    emap: ElevationMap,
    params: VehicleParams,
    dt: float,
    weights=None,
    contact: ContactConfig = ContactConfig(),
    disturbance: np.ndarray | None = None,
) -> VehicleState:
    """One model step plus the kinematic layer.

    ``disturbance`` (4 entries: dV_x, dV_y, dV_z, domega_z) is added to the
    model's body rates before integration; the synthetic generator uses it as
    process noise.
    """
    q0 = state.orientation
    if model is ModelKind.LEARNED:
        if weights is None:
            raise ShapeMismatch("the learned model needs weights")
        yaw = euler_from_quat(q0).yaw
        patch = extract_patch(emap, state.position[:2], yaw, weights.patch_size, weights.patch_resolution)
        rates = learned_step(state, u, patch, weights, dt, params.gravity)
    elif model is ModelKind.NOSLIP3D:
        rates = noslip_step(state, u, params, dt)
    elif model is ModelKind.SLIP3D:
        rates = slip_step(state, u, params, euler_from_quat(q0), dt)
    else:  # pragma: no cover
        raise ValueError(model)

    v1 = rates.velocity
    w1 = rates.angular_velocity
    if disturbance is not None:
        v1 = v1 + disturbance[:3]
        w1 = w1 + np.array([0.0, 0.0, disturbance[3]])

    p_pred = state.position + quat_to_matrix(q0) @ v1 * dt
    if model is ModelKind.LEARNED:
        q1 = integrate_orientation(q0, w1, dt)
        pos1 = p_pred
    else:
        q_yaw = integrate_orientation(q0, np.array([0.0, 0.0, w1[2]]), dt)
        pos1, q1 = project_pose(
            emap,
            p_pred[:2],
            euler_from_quat(q_yaw).yaw,
            params.front_axle_distance,
            params.rear_axle_distance,
            contact.track_width,
            contact.clearance,
        )
        rel = quat_to_rotvec(quat_multiply(quat_conjugate(q0), q1)) / dt
        w1 = np.array([rel[0], rel[1], w1[2]])
    acc = body_acceleration(q0, state.body_velocity, state.body_angular_velocity, v1, dt, params.gravity)
    return VehicleState(state.time + dt, pos1, q1, v1, w1, acc)


def rollout(
    model: ModelKind,
    gt: Trajectory,
    emap: ElevationMap,
    params: VehicleParams,
    weights=None,
    substeps: int = 1,
    contact: ContactConfig = ContactConfig(),
    source_id: str = "",
) -> RolloutResult:
    """Roll ``model`` forward from ``gt``'s first state, replaying its controls."""
    model = ModelKind(model)
    if model is ModelKind.LEARNED and weights is None:
        raise ShapeMismatch("the learned model needs weights")
    if substeps < 1:
        raise DataError("substeps must be >= 1")
    n = len(gt)
    dt = gt.dt
    h = dt / substeps

    pos = np.empty((n, 3))
    quat = np.empty((n, 4))
    vel = np.empty((n, 3))
    omg = np.empty((n, 3))
    acc = np.empty((n, 3))
    pos[0], quat[0], vel[0], omg[0], acc[0] = (
        gt.positions[0], gt.orientations[0], gt.velocities[0], gt.angular_velocities[0], gt.accelerations[0],
    )
    state = gt.state(0)
    for i in range(n - 1):
        u = gt.control(i)
        start = state
        for _ in range(substeps):
            state = advance(model, state, u, emap, params, h, weights, contact)
        if substeps > 1:
            a = body_acceleration(
                start.orientation, start.body_velocity, start.body_angular_velocity,
                state.body_velocity, dt, params.gravity,
            )
            state = VehicleState(
                gt.times[i + 1], state.position, state.orientation, state.body_velocity,
                state.body_angular_velocity, a,
            )
        pos[i + 1] = state.position
        quat[i + 1] = state.orientation
        vel[i + 1] = state.body_velocity
        omg[i + 1] = state.body_angular_velocity
        acc[i + 1] = state.body_acceleration

    pred = Trajectory(gt.times, pos, quat, vel, omg, acc, gt.steering, gt.wheel_speed, dt=dt)
    return RolloutResult(pred, model, source_id)


@dataclass(frozen=True)
class RolloutFailure:
    source_id: str
    index: int
    reason: str


def _rollout_job(args):
    model, gt, emap, params, weights, substeps, contact, sid = args
    try:
        return rollout(model, gt, emap, params, weights, substeps, contact, sid)
    except OffroadError as exc:
        return RolloutFailure(sid, -1, f"{type(exc).__name__}: {exc}")


def rollout_batch(
    model: ModelKind,
    dataset: Sequence[Trajectory],
    emap: ElevationMap,
    params: VehicleParams,
    weights=None,
    substeps: int = 1,
    contact: ContactConfig = ContactConfig(),
    ids: Sequence[str] | None = None,
    jobs: int = 1,
) -> list[RolloutResult | RolloutFailure]:
    """Roll out every trajectory, keeping input order.

    Failures do not abort the batch: the slot holds a :class:`RolloutFailure`
    carrying the reason.
    """
    model = ModelKind(model)
    if ids is None:
        ids = [str(i) for i in range(len(dataset))]
    jobs_args = [
        (model, gt, emap, params, weights, substeps, contact, sid) for gt, sid in zip(dataset, ids)
    ]
    if jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            out = list(pool.map(_rollout_job, jobs_args))
    else:
        out = [_rollout_job(a) for a in jobs_args]
    return [
        RolloutFailure(r.source_id, i, r.reason) if isinstance(r, RolloutFailure) else r
        for i, r in enumerate(out)
    ]
