import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from offroad_bench.bench import (
    GROUPS,
    BenchmarkReport,
    StateGroup,
    aggregate,
    evaluate,
    format_cell,
    group_errors,
    hmne,
    render_report,
    report_from_csv,
    report_to_csv,
    scatter_from_csv,
    scatter_points,
    scatter_to_csv,
    trend,
    trend_to_text,
)
from offroad_bench.core import EulerAngles, VehicleParams, quat_from_euler
from offroad_bench.energy import fit
from offroad_bench.errors import EmptyDataset, FormatError, InsufficientPoints, LengthMismatch, SingularFit
from offroad_bench.learn import MLPWeights, feature_dim, zero_weights
from offroad_bench.models import ModelKind

from conftest import make_trajectory

P = VehicleParams()


def yaw_traj(yaws):
    q = [quat_from_euler(EulerAngles(0, 0, y)) for y in yaws]
    return make_trajectory(len(yaws), orientations=q)


# hmne


def test_hmne_identity_all_groups():
    t = make_trajectory(6)
    assert all(hmne(t, t, g) == 0.0 for g in GROUPS)


def test_hmne_position_hand_example():
    gt = make_trajectory(3, positions=[[0, 0, 0], [1, 0, 0], [2, 0, 0]])
    pred = gt.with_columns(positions=[[0, 0, 0], [1, 0.5, 0], [2, 1, 0]])
    assert hmne(pred, gt, StateGroup.POSITION) == 1.0


def test_hmne_yaw_wraps():
    gt = yaw_traj([0.0, -3.1])
    pred = yaw_traj([0.0, 3.1])
    e = hmne(pred, gt, StateGroup.YAW)
    assert e == pytest.approx(2 * math.pi - 6.2, abs=1e-9)
    assert e == pytest.approx(0.0832, abs=1e-4)


def test_hmne_length_mismatch():
    with pytest.raises(LengthMismatch):
        hmne(make_trajectory(4), make_trajectory(5), StateGroup.POSITION)


@given(st.integers(0, 10_000), st.sampled_from(GROUPS[:4]))
@settings(max_examples=30)
def test_hmne_symmetric_for_vector_groups(seed, g):
    rng = np.random.default_rng(seed)
    a, b = make_trajectory(7, rng=rng), make_trajectory(7, rng=rng)
    assert hmne(a, b, g) == hmne(b, a, g)
    assert hmne(a, b, g) >= 0


@given(st.integers(0, 10_000), st.integers(0, 6), st.floats(1.0, 5.0))
@settings(max_examples=30)
def test_hmne_monotone_in_pointwise_error(seed, step, scale):
    rng = np.random.default_rng(seed)
    gt = make_trajectory(7, rng=rng)
    pred = make_trajectory(7, rng=rng)
    err = pred.velocities - gt.velocities
    bigger = err.copy()
    bigger[step] *= scale
    worse = gt.with_columns(velocities=gt.velocities + bigger)
    assert hmne(worse, gt, StateGroup.VELOCITY) >= hmne(pred, gt, StateGroup.VELOCITY) - 1e-12


def test_group_errors_per_step():
    gt = make_trajectory(3, positions=[[0, 0, 0], [1, 0, 0], [2, 0, 0]])
    pred = gt.with_columns(positions=[[0, 0, 0], [1, 0.5, 0], [2, 1, 0]])
    assert np.array_equal(group_errors(pred, gt, StateGroup.POSITION), [0, 0.5, 1.0])


def test_state_group_parse_and_labels():
    assert StateGroup.parse("Accel.") is StateGroup.ACCELERATION
    assert StateGroup.parse("yaw") is StateGroup.YAW
    assert [g.label for g in GROUPS] == ["Accel.", "Ang. Vel.", "Velocity", "Position", "Roll", "Pitch", "Yaw"]


# aggregation / evaluate


def test_aggregate_population_std():
    assert aggregate([1.0, 3.0]) == (2.0, 1.0)
    assert aggregate([5.0]) == (5.0, 0.0)


def test_evaluate_self_consistency(small_dataset):
    rep = evaluate([ModelKind.SLIP3D, ModelKind.NOSLIP3D], small_dataset.trajectories, small_dataset.map, P)
    assert rep.models == [ModelKind.NOSLIP3D, ModelKind.SLIP3D]
    assert all(rep.mean(ModelKind.SLIP3D, g) < 1e-9 for g in GROUPS)
    assert rep.mean(ModelKind.NOSLIP3D, StateGroup.POSITION) > 0
    assert len(rep.cells) == 14 and not rep.excluded


def test_evaluate_single_trajectory_has_zero_std(small_dataset):
    one = dict(list(small_dataset.trajectories.items())[:1])
    rep = evaluate([ModelKind.NOSLIP3D], one, small_dataset.map, P)
    assert all(rep.std(ModelKind.NOSLIP3D, g) == 0.0 for g in GROUPS)


def test_evaluate_means_are_hand_averages(small_dataset):
    from offroad_bench.rollout import rollout

    items = list(small_dataset.trajectories.items())[:2]
    rep = evaluate([ModelKind.NOSLIP3D], dict(items), small_dataset.map, P)
    for g in GROUPS:
        vals = [hmne(rollout(ModelKind.NOSLIP3D, t, small_dataset.map, P).predicted, t, g) for _, t in items]
        assert rep.mean(ModelKind.NOSLIP3D, g) == pytest.approx((vals[0] + vals[1]) / 2, rel=1e-15)


def test_evaluate_pooled_moments(small_dataset):
    items = list(small_dataset.trajectories.items())
    a, b = dict(items[:3]), dict(items[3:])
    whole = evaluate([ModelKind.NOSLIP3D], dict(items), small_dataset.map, P)
    ra = evaluate([ModelKind.NOSLIP3D], a, small_dataset.map, P)
    rb = evaluate([ModelKind.NOSLIP3D], b, small_dataset.map, P)
    na, nb = len(a), len(b)
    for g in GROUPS:
        (ma, sa), (mb, sb) = ra.cells[(ModelKind.NOSLIP3D, g)], rb.cells[(ModelKind.NOSLIP3D, g)]
        m = (na * ma + nb * mb) / (na + nb)
        var = (na * (sa**2 + ma**2) + nb * (sb**2 + mb**2)) / (na + nb) - m**2
        mw, sw = whole.cells[(ModelKind.NOSLIP3D, g)]
        assert mw == pytest.approx(m, rel=1e-12)
        assert sw == pytest.approx(math.sqrt(max(var, 0)), rel=1e-9, abs=1e-12)


def test_evaluate_reports_excluded(small_dataset):
    from offroad_bench.terrain import flat_map

    rep = evaluate([ModelKind.NOSLIP3D], small_dataset.trajectories, flat_map(8, 0.5), P)
    assert len(rep.excluded) == len(small_dataset.trajectories)
    assert rep.counts[ModelKind.NOSLIP3D] == 0
    assert "excluded:" in render_report(rep)


def test_evaluate_empty():
    from offroad_bench.terrain import flat_map

    with pytest.raises(EmptyDataset):
        evaluate([ModelKind.SLIP3D], [], flat_map(), P)


def test_evaluate_deterministic_and_parallel(small_dataset):
    em = fit(list(small_dataset.trajectories.values()))
    w = zero_weights(feature_dim(3), (4,))
    w = MLPWeights(w.layers, w.activations, w.input_stats, w.output_stats, 3, 0.5)
    args = (list(ModelKind), small_dataset.trajectories, small_dataset.map, P, w, em)
    r1 = evaluate(*args)
    r2 = evaluate(*args, jobs=2)
    assert report_to_csv(r1) == report_to_csv(r2)
    assert scatter_to_csv(r1) == scatter_to_csv(r2)
    assert len(scatter_points(r1, ModelKind.SLIP3D, StateGroup.ACCELERATION)) == len(small_dataset.trajectories)


# trend


def test_trend_exact_cubic():
    x = np.linspace(-2, 3, 12)
    f = trend(list(zip(x, x**3)))
    assert np.allclose(f.coefficients, [0, 0, 0, 1], atol=1e-9)


def test_trend_constant():
    x = np.linspace(5, 9, 7)
    f = trend(list(zip(x, np.full(7, 2.0))))
    assert np.allclose(f.coefficients, [2, 0, 0, 0], atol=1e-9)


def test_trend_offset_abscissa_matches_polyfit():
    rng = np.random.default_rng(0)
    x = rng.uniform(100, 104, 60)
    y = 0.3 * (x - 102) ** 3 - (x - 102) + rng.normal(scale=0.1, size=60)
    f = trend(list(zip(x, y)))
    ref = np.polynomial.polynomial.Polynomial.fit(x, y, 3).convert().coef
    assert np.allclose(f(x), np.polynomial.polynomial.polyval(x, ref), atol=1e-6)


def test_trend_is_least_squares_optimal():
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 2, 200)
    y = x**3 - 2 * x + rng.normal(scale=0.3, size=200)
    f = trend(list(zip(x, y)))
    best = np.sum(f.residuals**2)
    assert np.all(np.isfinite(f.residuals)) and f.coefficients.size == 4
    for _ in range(1000):
        c = f.coefficients + rng.normal(scale=1e-3, size=4)
        assert best <= np.sum((y - np.polynomial.polynomial.polyval(x, c)) ** 2)


def test_trend_errors():
    with pytest.raises(InsufficientPoints):
        trend([(0, 0), (1, 1), (2, 2)])
    with pytest.raises(SingularFit):
        trend([(0, 0), (1, 1), (1, 2), (0, 3), (2, 2)])


def test_trend_text():
    x = np.arange(5.0)
    text = trend_to_text(trend(list(zip(x, x))), ModelKind.NOSLIP3D, StateGroup.ACCELERATION)
    assert text.splitlines()[0] == "offroad-trend 1"
    assert "points 5" in text


# rendering / files


def test_format_cell():
    assert format_cell(22.20, 15.09) == "22.20 ± 15.09"
    assert format_cell(0, 0) == "0.00 ± 0.00"


def _full_report():
    cells = {(m, g): (i + 0.5 * j, 0.1 * j) for i, m in enumerate(ModelKind) for j, g in enumerate(GROUPS)}
    return BenchmarkReport("demo", list(ModelKind), cells, {m: 10 for m in ModelKind}, 10)


def test_render_layout():
    text = render_report(_full_report())
    lines = text.splitlines()
    assert lines[1].split("  ")[0].strip() == "Dataset"
    header = lines[1]
    positions = [header.index(g.label) for g in GROUPS]
    assert positions == sorted(positions)
    assert sum(line.count("±") for line in lines[3:6]) == 21
    assert [line.split()[1] for line in lines[3:6]] == ["NoSlip3D", "Slip3D", "Learned"]
    assert render_report(_full_report()) == text


def test_report_csv_round_trip():
    rep = _full_report()
    text = report_to_csv(rep)
    back = report_from_csv(text)
    assert back.cells == rep.cells and back.models == rep.models and back.n_trajectories == 10
    assert report_to_csv(back) == text


def test_report_csv_bad_header():
    with pytest.raises(FormatError):
        report_from_csv("a,b\n")


def test_scatter_round_trip(small_dataset):
    em = fit(list(small_dataset.trajectories.values()))
    rep = evaluate([ModelKind.NOSLIP3D], small_dataset.trajectories, small_dataset.map, P, energy_model=em)
    text = scatter_to_csv(rep)
    back = scatter_from_csv(text)
    assert [(s.source_id, s.energy, dict(s.errors)) for s in back] == [
        (s.source_id, s.energy, dict(s.errors)) for s in rep.scores
    ]
