"""Trajectory aggressiveness: dynamic-limit checks and the free-energy score.

The differentiated state used for features and limits has nine channels per
timestep, read straight from the stored body-frame columns::

    0-2  body acceleration  a_x, a_y, a_z
    3-5  body angular rate  w_x, w_y, w_z
    6-8  body velocity      v_x, v_y, v_z

A trajectory's feature vector holds the (max, min) over time of each selected
channel. Each feature gets a 1D Gaussian fitted over a reference dataset and
the score is

    E(tau) = -T * logsumexp_i( log p_i(phi_i(tau)) / T )

so trajectories whose extremes are unlikely under the reference set get a
higher energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .core import Trajectory
from .errors import DataError, DegenerateFeature, EmptyDataset, EmptyTrajectory, FormatError

CHANNELS = ("ax", "ay", "az", "wx", "wy", "wz", "vx", "vy", "vz")
ACCEL_CHANNELS = (0, 1, 2)
ENERGY_MODEL_HEADER = "offroad-energy-model 1"
VARIANCE_FLOOR = 1e-12


def differentiated_state(traj: Trajectory) -> np.ndarray:
    """(N, 9) matrix of the channels listed in :data:`CHANNELS`."""
    return np.hstack([traj.accelerations, traj.angular_velocities, traj.velocities])


@dataclass(frozen=True)
class FeatureSelection:
    indices: tuple[int, ...] = ACCEL_CHANNELS

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if not idx:
            raise DataError("select at least one channel")
        if len(set(idx)) != len(idx):
            raise DataError("selected channels must be distinct")
        if any(i < 0 or i >= len(CHANNELS) for i in idx):
            raise DataError(f"channel index out of range 0..{len(CHANNELS) - 1}")
        object.__setattr__(self, "indices", idx)

    @property
    def dim(self) -> int:
        return 2 * len(self.indices)


@dataclass(frozen=True)
class DynamicLimits:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    selection: FeatureSelection = FeatureSelection()

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(self.selection.indices) or len(hi) != len(lo):
            raise DataError("one lower and one upper bound per selected channel")
        if any(a > b for a, b in zip(lo, hi)):
            raise DataError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)


class Violation(NamedTuple):
    step: int
    channel: int
    value: float
    bound: float


@dataclass(frozen=True, eq=False)
class EnergyModel:
    temperature: float
    selection: FeatureSelection
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        var = np.asarray(self.variances, dtype=float)
        if not self.temperature > 0:
            raise DataError("temperature must be positive")
        if means.shape != (self.selection.dim,) or var.shape != means.shape:
            raise DataError(f"need {self.selection.dim} means and variances")
        if np.any(var <= 0):
            raise DataError("variances must be positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", var)

    def equals(self, other: "EnergyModel") -> bool:
        return (
            self.temperature == other.temperature
            and self.selection == other.selection
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.variances, other.variances)
        )


def features(traj: Trajectory, sel: FeatureSelection = FeatureSelection()) -> np.ndarray:
    """``[max_t x[k1], min_t x[k1], ..., max_t x[kd], min_t x[kd]]``."""
    if traj is None or len(traj) < 2:
        raise EmptyTrajectory("features need a trajectory with at least 2 states")
    cols = differentiated_state(traj)[:, list(sel.indices)]
    out = np.empty(sel.dim)
    out[0::2] = cols.max(axis=0)
    out[1::2] = cols.min(axis=0)
    return out


def fit(
    dataset: Sequence[Trajectory],
    sel: FeatureSelection = FeatureSelection(),
    temperature: float = 1.0,
) -> EnergyModel:
    """Per-feature Gaussian moments (mean, population variance) over trajectories."""
    if len(dataset) < 2:
        raise EmptyDataset("fitting needs at least two trajectories")
    F = np.array([features(t, sel) for t in dataset])
    mean = F.mean(axis=0)
    var = ((F - mean) ** 2).mean(axis=0)
    bad = np.flatnonzero(var < VARIANCE_FLOOR)
    if bad.size:
        names = [f"{CHANNELS[sel.indices[i // 2]]}:{'max' if i % 2 == 0 else 'min'}" for i in bad]
        raise DegenerateFeature(f"zero-variance features: {', '.join(names)}")
    return EnergyModel(float(temperature), sel, mean, var)


def gaussian_logpdf(x: np.ndarray, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    return -0.5 * np.log(2.0 * np.pi * var) - (x - mean) ** 2 / (2.0 * var)


def logsumexp(a: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    m = float(np.max(a))
    if not math.isfinite(m):
        return m
    return m + math.log(float(np.sum(np.exp(a - m))))


def free_energy(log_densities, temperature: float = 1.0) -> float:
    """``-T * logsumexp(log_densities / T)`` for any number of terms."""
    if not temperature > 0:
        raise DataError("temperature must be positive")
    return -temperature * logsumexp(np.asarray(log_densities, dtype=float) / temperature)


def energy_from_features(model: EnergyModel, phi: np.ndarray) -> float:
    logp = gaussian_logpdf(np.asarray(phi, dtype=float), model.means, model.variances)
    return free_energy(logp, model.temperature)


def energy(model: EnergyModel, traj: Trajectory) -> float:
    return energy_from_features(model, features(traj, model.selection))


def check_limits(traj: Trajectory, lim: DynamicLimits) -> list[Violation]:
    """Every (step, channel) sample outside its box, in step then channel order."""
    cols = differentiated_state(traj)[:, list(lim.selection.indices)]
    lo = np.array(lim.lower)
    hi = np.array(lim.upper)
    out = []
    below = cols < lo
    above = cols > hi
    for t, j in zip(*np.nonzero(below | above)):
        bound = lim.lower[j] if below[t, j] else lim.upper[j]
        out.append(Violation(int(t), lim.selection.indices[j], float(cols[t, j]), bound))
    return out


# ---------------------------------------------------------------------------
# text format


def energy_model_to_text(model: EnergyModel) -> str:
    lines = [
        ENERGY_MODEL_HEADER,
        f"temperature {model.temperature!r}",
        "selection " + " ".join(str(i) for i in model.selection.indices),
        "# feature mean variance",
    ]
    for i, (m, v) in enumerate(zip(model.means, model.variances)):
        lines.append(f"{i} {float(m)!r} {float(v)!r}")
    return "\n".join(lines) + "\n"


def energy_model_from_text(text: str) -> EnergyModel:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0] != ENERGY_MODEL_HEADER:
        raise FormatError("not an energy model file (bad header)")
    try:
        key, t = lines[1].split()
        assert key == "temperature"
        parts = lines[2].split()
        assert parts[0] == "selection"
        sel = FeatureSelection(tuple(int(p) for p in parts[1:]))
        rows = [ln.split() for ln in lines[3:]]
        means = [float(r[1]) for r in rows]
        var = [float(r[2]) for r in rows]
    except (AssertionError, ValueError, IndexError) as exc:
        raise FormatError(f"malformed energy model: {exc}") from exc
    return EnergyModel(float(t), sel, np.array(means), np.array(var))


def save_energy_model(model: EnergyModel, path) -> None:
    Path(path).write_text(energy_model_to_text(model))


def load_energy_model(path) -> EnergyModel:
    return energy_model_from_text(Path(path).read_text())
