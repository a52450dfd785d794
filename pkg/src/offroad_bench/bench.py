"""Benchmark harness: horizon max-normed error, per-model tables, energy trends."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import Trajectory, VehicleParams, wrap_angles
from .energy import EnergyModel, energy
from .errors import EmptyDataset, FormatError, InsufficientPoints, LengthMismatch, ShapeMismatch, SingularFit
from .models import ModelKind
from .rollout import ContactConfig, RolloutFailure, rollout_batch
from .terrain import ElevationMap


class StateGroup(str, enum.Enum):
    ACCELERATION = "accel"
    ANGULAR_VELOCITY = "ang_vel"
    VELOCITY = "velocity"
    POSITION = "position"
    ROLL = "roll"
    PITCH = "pitch"
    YAW = "yaw"

    @property
    def label(self) -> str:
        return _LABELS[self]

    @property
    def is_angle(self) -> bool:
        return self in (StateGroup.ROLL, StateGroup.PITCH, StateGroup.YAW)

    @classmethod
    def parse(cls, text: str) -> "StateGroup":
        t = text.strip().lower()
        for g in cls:
            if t in (g.value, g.label.lower()):
                return g
        raise ValueError(f"unknown state group {text!r}")


_LABELS = {
    StateGroup.ACCELERATION: "Accel.",
    StateGroup.ANGULAR_VELOCITY: "Ang. Vel.",
    StateGroup.VELOCITY: "Velocity",
    StateGroup.POSITION: "Position",
    StateGroup.ROLL: "Roll",
    StateGroup.PITCH: "Pitch",
    StateGroup.YAW: "Yaw",
}
GROUPS = tuple(StateGroup)
MODEL_ORDER = tuple(ModelKind)
_VECTOR_COLUMNS = {
    StateGroup.ACCELERATION: "accelerations",
    StateGroup.ANGULAR_VELOCITY: "angular_velocities",
    StateGroup.VELOCITY: "velocities",
    StateGroup.POSITION: "positions",
}


def group_errors(pred: Trajectory, gt: Trajectory, group: StateGroup) -> np.ndarray:
    """Per-timestep error magnitude for one state group."""
    if len(pred) != len(gt) or pred.dt != gt.dt:
        raise LengthMismatch(f"prediction has {len(pred)} states at dt={pred.dt}, ground truth {len(gt)} at dt={gt.dt}")
    group = StateGroup(group)
    if group.is_angle:
        k = ("roll", "pitch", "yaw").index(group.value)
        d = pred.euler_angles()[:, k] - gt.euler_angles()[:, k]
        return np.abs(wrap_angles(d))
    col = _VECTOR_COLUMNS[group]
    return np.linalg.norm(getattr(pred, col) - getattr(gt, col), axis=1)


def hmne(pred: Trajectory, gt: Trajectory, group: StateGroup) -> float:
    """Largest per-step error norm over the horizon."""
    return float(group_errors(pred, gt, group).max())


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class TrajectoryScore:
    model: ModelKind
    source_id: str
    errors: Mapping[StateGroup, float]
    energy: float | None = None


@dataclass(frozen=True)
class Excluded:
    model: ModelKind
    source_id: str
    reason: str


@dataclass
class BenchmarkReport:
    dataset_id: str
    models: list[ModelKind]
    cells: dict[tuple[ModelKind, StateGroup], tuple[float, float]]
    counts: dict[ModelKind, int]
    n_trajectories: int
    scores: list[TrajectoryScore] = field(default_factory=list)
    excluded: list[Excluded] = field(default_factory=list)

    def mean(self, model, group) -> float:
        return self.cells[(ModelKind(model), StateGroup(group))][0]

    def std(self, model, group) -> float:
        return self.cells[(ModelKind(model), StateGroup(group))][1]


def aggregate(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation, summed in input order."""
    if not len(values):
        return math.nan, math.nan
    a = np.asarray(values, dtype=float)
    m = float(a.mean())
    return m, float(np.sqrt(((a - m) ** 2).mean()))


def evaluate(
    models: Iterable[ModelKind],
    dataset: Sequence[Trajectory] | Mapping[str, Trajectory],
    emap: ElevationMap,
    params: VehicleParams,
    weights=None,
    energy_model: EnergyModel | None = None,
    dataset_id: str = "dataset",
    substeps: int = 1,
    contact: ContactConfig = ContactConfig(),
    jobs: int = 1,
) -> BenchmarkReport:
    """Roll every model over every trajectory and tabulate H-MNE per state group."""
    if isinstance(dataset, Mapping):
        ids, trajs = list(dataset.keys()), list(dataset.values())
    else:
        ids, trajs = [str(i) for i in range(len(dataset))], list(dataset)
    if not trajs:
        raise EmptyDataset("cannot evaluate an empty dataset")
    wanted = {ModelKind(m) for m in models}
    ordered = [m for m in MODEL_ORDER if m in wanted]
    if ModelKind.LEARNED in wanted and weights is None:
        raise ShapeMismatch("evaluating the learned model needs weights")

    energies = [energy(energy_model, t) for t in trajs] if energy_model is not None else [None] * len(trajs)
    scores: list[TrajectoryScore] = []
    excluded: list[Excluded] = []
    cells = {}
    counts = {}
    for model in ordered:
        results = rollout_batch(model, trajs, emap, params, weights, substeps, contact, ids, jobs)
        per_group = {g: [] for g in GROUPS}
        for res, gt, sid, e in zip(results, trajs, ids, energies):
            if isinstance(res, RolloutFailure):
                excluded.append(Excluded(model, sid, res.reason))
                continue
            errs = {g: hmne(res.predicted, gt, g) for g in GROUPS}
            for g in GROUPS:
                per_group[g].append(errs[g])
            scores.append(TrajectoryScore(model, sid, errs, e))
        for g in GROUPS:
            cells[(model, g)] = aggregate(per_group[g])
        counts[model] = len(per_group[GROUPS[0]])
    return BenchmarkReport(dataset_id, ordered, cells, counts, len(trajs), scores, excluded)


# ---------------------------------------------------------------------------
# trend fitting


@dataclass(frozen=True, eq=False)
class TrendFit:
    coefficients: np.ndarray  # c0 + c1 x + c2 x^2 + c3 x^3
    energies: np.ndarray
    errors: np.ndarray

    def __call__(self, x):
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), self.coefficients)

    @property
    def residuals(self) -> np.ndarray:
        return self.errors - self(self.energies)


def trend(points: Sequence[tuple[float, float]], degree: int = 3) -> TrendFit:
    """Least-squares cubic through ``(energy, error)`` points.

    Solved with the normal equations on a centred and scaled abscissa, then
    mapped back to coefficients in the original variable.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n_coef = degree + 1
    if pts.shape[0] < n_coef:
        raise InsufficientPoints(f"need at least {n_coef} points, got {pts.shape[0]}")
    x, y = pts[:, 0], pts[:, 1]
    if not np.all(np.isfinite(pts)):
        raise SingularFit("non-finite points")
    if np.unique(x).size < n_coef:
        raise SingularFit(f"need {n_coef} distinct energy values")
    c = float(x.mean())
    s = float(np.abs(x - c).max())
    z = (x - c) / s
    V = np.vander(z, n_coef, increasing=True)
    A = V.T @ V
    if np.linalg.cond(A) > 1e12:
        raise SingularFit("normal equations are ill-conditioned")
    beta = np.linalg.solve(A, V.T @ y)
    # sum_k beta_k ((x - c)/s)^k  ->  sum_j coef_j x^j
    coef = np.zeros(n_coef)
    for k, b in enumerate(beta):
        for j in range(k + 1):
            coef[j] += b * math.comb(k, j) * (-c) ** (k - j) / s**k
    return TrendFit(coef, x.copy(), y.copy())


def scatter_points(report: BenchmarkReport, model, group) -> list[tuple[float, float]]:
    model, group = ModelKind(model), StateGroup(group)
    return [
        (s.energy, s.errors[group])
        for s in report.scores
        if s.model is model and s.energy is not None
    ]


# ---------------------------------------------------------------------------
# rendering and file formats


def format_cell(mean: float, std: float) -> str:
    return f"{mean:.2f} ± {std:.2f}"


def render_report(report: BenchmarkReport) -> str:
    """Fixed-width table, one row per model, one column per state group."""
    header = ["Dataset", "Model"] + [g.label for g in GROUPS]
    rows = []
    for m in report.models:
        rows.append([report.dataset_id, m.label] + [format_cell(*report.cells[(m, g)]) for g in GROUPS])
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]

    def line(cells):
        return "  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths))).rstrip()

    out = ["H-MNE (mean ± std over trajectories)", line(header), line(["-" * w for w in widths])]
    out += [line(r) for r in rows]
    out.append(f"trajectories: {report.n_trajectories}")
    for m in report.models:
        if report.counts.get(m, report.n_trajectories) != report.n_trajectories:
            out.append(f"  {m.label}: {report.counts[m]} evaluated")
    if report.excluded:
        out.append("excluded:")
        out += [f"  {e.model.label} {e.source_id}: {e.reason}" for e in report.excluded]
    return "\n".join(out) + "\n"


CSV_FIELDS = ["dataset", "model", "group", "mean", "std", "cell", "n"]


def report_to_csv(report: BenchmarkReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for m in report.models:
        for g in GROUPS:
            mean, std = report.cells[(m, g)]
            w.writerow([report.dataset_id, m.value, g.value, repr(mean), repr(std), format_cell(mean, std), report.counts[m]])
    w.writerow(["#trajectories", report.n_trajectories, "", "", "", "", ""])
    for e in report.excluded:
        w.writerow(["#excluded", e.model.value, e.source_id, e.reason, "", "", ""])
    return buf.getvalue()


def report_from_csv(text: str) -> BenchmarkReport:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != CSV_FIELDS:
        raise FormatError("not a benchmark report CSV")
    cells, counts, models, excluded = {}, {}, [], []
    dataset_id, n = "dataset", 0
    for r in rows[1:]:
        if r[0] == "#trajectories":
            n = int(r[1])
        elif r[0] == "#excluded":
            excluded.append(Excluded(ModelKind(r[1]), r[2], r[3]))
        else:
            dataset_id = r[0]
            m, g = ModelKind(r[1]), StateGroup(r[2])
            if m not in models:
                models.append(m)
            cells[(m, g)] = (float(r[3]), float(r[4]))
            counts[m] = int(r[6])
    return BenchmarkReport(dataset_id, models, cells, counts, n, [], excluded)


SCATTER_FIELDS = ["id", "model", "energy"] + [g.value for g in GROUPS]


def scatter_to_csv(report: BenchmarkReport) -> str:
    """One row per (trajectory, model): id, model, E(tau), H-MNE per group."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCATTER_FIELDS)
    for s in report.scores:
        e = "" if s.energy is None else repr(s.energy)
        w.writerow([s.source_id, s.model.value, e] + [repr(s.errors[g]) for g in GROUPS])
    return buf.getvalue()


def scatter_from_csv(text: str) -> list[TrajectoryScore]:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for r in rows:
        e = float(r["energy"]) if r["energy"] else None
        out.append(
            TrajectoryScore(ModelKind(r["model"]), r["id"], {g: float(r[g.value]) for g in GROUPS}, e)
        )
    return out


def trend_to_text(fit: TrendFit, model: ModelKind, group: StateGroup) -> str:
    lines = [
        "offroad-trend 1",
        f"model {ModelKind(model).value}",
        f"group {StateGroup(group).value}",
        "coefficients " + " ".join(repr(float(c)) for c in fit.coefficients),
        f"points {fit.energies.size}",
        f"residual_norm {float(np.linalg.norm(fit.residuals))!r}",
    ]
    return "\n".join(lines) + "\n"
