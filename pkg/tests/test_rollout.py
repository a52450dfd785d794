import math

import numpy as np
import pytest

from offroad_bench.core import ControlInput, EulerAngles, Trajectory, VehicleParams, VehicleState, quat_from_euler
from offroad_bench.errors import OutOfBounds, ShapeMismatch
from offroad_bench.learn import MLPWeights, feature_dim, zero_weights
from offroad_bench.models import ModelKind
from offroad_bench.rollout import RolloutFailure, rollout, rollout_batch
from offroad_bench.terrain import flat_map

P = VehicleParams()


def constant_control_gt(n, steer, speed, yaw=0.0, dt=0.1, start=(0.0, 0.0)):
    """Ground truth whose only meaningful parts are state 0 and the controls."""
    q = quat_from_euler(EulerAngles(0, 0, yaw))
    s0 = VehicleState(0.0, [start[0], start[1], 0.0], q, [speed, 0, 0], [0, 0, 0], [0, 0, 9.81])
    states = [VehicleState(i * dt, s0.position, q, s0.body_velocity, [0, 0, 0], s0.body_acceleration) for i in range(n)]
    return Trajectory.from_states(states, [ControlInput(steer, speed)] * n, dt=dt)


def fit_circle(xy):
    """Algebraic least-squares circle: returns (centre, radius)."""
    x, y = xy[:, 0], xy[:, 1]
    A = np.column_stack([2 * x, 2 * y, np.ones_like(x)])
    cx, cy, k = np.linalg.lstsq(A, x * x + y * y, rcond=None)[0]
    return np.array([cx, cy]), math.sqrt(k + cx * cx + cy * cy)


def learned_zero(ps=3):
    w = zero_weights(feature_dim(ps), (4,))
    return MLPWeights(w.layers, w.activations, w.input_stats, w.output_stats, ps, 0.5)


def test_circle_radius():
    gt = constant_control_gt(101, 0.2, 5.0)
    res = rollout(ModelKind.NOSLIP3D, gt, flat_map(121, 0.5), P)
    _, r = fit_circle(res.predicted.positions[:, :2])
    expected = P.wheelbase / math.tan(0.2)
    assert abs(r - expected) / expected < 0.02


def test_straight_line_on_flat_map():
    gt = constant_control_gt(41, 0.0, 6.0, yaw=0.6)
    pred = rollout(ModelKind.NOSLIP3D, gt, flat_map(121, 0.5), P).predicted
    yaws = pred.euler_angles()[:, 2]
    assert np.abs(yaws - 0.6).max() < 1e-9
    d = pred.positions[:, :2] - pred.positions[0, :2]
    cross = d[:, 0] * math.sin(0.6) - d[:, 1] * math.cos(0.6)
    assert np.abs(cross).max() < 1e-9
    assert np.abs(pred.positions[:, 2]).max() == 0.0


@pytest.mark.parametrize("model", list(ModelKind))
def test_horizon_one_keeps_initial_state(model):
    gt = constant_control_gt(2, 0.1, 5.0)
    res = rollout(model, gt, flat_map(64, 0.5), P, weights=learned_zero())
    assert len(res.predicted) == 2 and res.predicted.dt == gt.dt
    assert np.array_equal(res.predicted.times, gt.times)
    for col in ("positions", "orientations", "velocities", "angular_velocities", "accelerations"):
        assert np.array_equal(getattr(res.predicted, col)[0], getattr(gt, col)[0])
    assert res.model is model


@pytest.mark.parametrize("model", list(ModelKind))
def test_initial_state_bitwise_on_dataset(model, small_dataset):
    gt = next(iter(small_dataset.trajectories.values()))
    res = rollout(model, gt, small_dataset.map, P, weights=learned_zero())
    assert np.array_equal(res.predicted.state(0).as_vector(), gt.state(0).as_vector())
    assert np.array_equal(res.predicted.steering, gt.steering)


def test_self_consistency(small_dataset):
    for gt in small_dataset.trajectories.values():
        pred = rollout(ModelKind.SLIP3D, gt, small_dataset.map, P).predicted
        for col in ("positions", "orientations", "velocities", "angular_velocities", "accelerations"):
            assert np.abs(getattr(pred, col) - getattr(gt, col)).max() < 1e-9


def test_ground_contact_models_sit_on_terrain(small_dataset):
    from offroad_bench.terrain import height_at

    gt = next(iter(small_dataset.trajectories.values()))
    pred = rollout(ModelKind.NOSLIP3D, gt, small_dataset.map, P).predicted
    assert np.allclose(pred.positions[1:, 2], height_at(small_dataset.map, pred.positions[1:, :2]), atol=1e-12)


def test_learned_zero_weights_integrates_own_rates():
    gt = constant_control_gt(11, 0.0, 4.0)
    pred = rollout(ModelKind.LEARNED, gt, flat_map(64, 0.5), P, weights=learned_zero()).predicted
    # no change in rates: straight line at constant speed
    assert np.allclose(pred.positions[:, 0], 4.0 * gt.times, atol=1e-12)
    assert np.array_equal(pred.velocities, np.tile([4.0, 0, 0], (11, 1)))


def test_learned_requires_weights():
    with pytest.raises(ShapeMismatch):
        rollout(ModelKind.LEARNED, constant_control_gt(3, 0, 5), flat_map(), P)


def test_leaving_map_is_an_error():
    gt = constant_control_gt(40, 0.0, 10.0)
    with pytest.raises(OutOfBounds):
        rollout(ModelKind.NOSLIP3D, gt, flat_map(32, 0.5), P)


def test_substeps_converge_toward_fine_solution():
    gt = constant_control_gt(31, 0.2, 5.0)
    emap = flat_map(121, 0.5)
    fine = rollout(ModelKind.SLIP3D, gt, emap, P, substeps=64).predicted
    err = [
        np.abs(rollout(ModelKind.SLIP3D, gt, emap, P, substeps=k).predicted.positions - fine.positions).max()
        for k in (1, 4)
    ]
    assert err[1] < err[0]


def test_batch_empty():
    assert rollout_batch(ModelKind.SLIP3D, [], flat_map(), P) == []


def test_batch_identical_copies():
    gt = constant_control_gt(21, 0.15, 5.0)
    out = rollout_batch(ModelKind.SLIP3D, [gt] * 4, flat_map(121, 0.5), P)
    assert all(r.predicted.equals(out[0].predicted) for r in out)


def test_batch_matches_sequential_and_parallel(small_dataset):
    trajs = list(small_dataset.trajectories.values())
    ids = list(small_dataset.trajectories)
    seq = [rollout(ModelKind.SLIP3D, t, small_dataset.map, P, source_id=i) for t, i in zip(trajs, ids)]
    for jobs in (1, 2):
        out = rollout_batch(ModelKind.SLIP3D, trajs, small_dataset.map, P, ids=ids, jobs=jobs)
        assert [r.source_id for r in out] == ids
        assert all(a.predicted.equals(b.predicted) for a, b in zip(seq, out))


def test_batch_collects_failures():
    good = constant_control_gt(11, 0.0, 5.0)
    bad = constant_control_gt(40, 0.0, 10.0)
    out = rollout_batch(ModelKind.NOSLIP3D, [good, bad, good], flat_map(32, 0.5), P, ids=["a", "b", "c"])
    assert isinstance(out[1], RolloutFailure) and out[1].index == 1 and "OutOfBounds" in out[1].reason
    assert out[0].predicted.equals(out[2].predicted)
