"""Trajectory files, resampling, dataset manifests and the synthetic data generator."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .core import (
    DEFAULT_DT,
    ControlInput,
    Trajectory,
    VehicleParams,
    VehicleState,
    quat_to_matrix,
)
from .errors import ConfigInvalid, DataError, FormatError, InsufficientCoverage, OutOfBounds
from .models import ModelKind
from .rollout import ContactConfig, advance
from .terrain import ElevationMap, load_map, project_pose, save_map

TRAJ_HEADER = "offroad-trajectory 1"
TRAJ_COLUMNS = (
    "t px py pz qw qx qy qz vx vy vz wx wy wz ax ay az steering wheel_speed".split()
)
SPLITS = ("train", "val", "test")


# ---------------------------------------------------------------------------
# trajectory text format


def trajectory_to_text(traj: Trajectory) -> str:
    lines = [f"{TRAJ_HEADER} dt={traj.dt!r}", "# " + " ".join(TRAJ_COLUMNS)]
    table = np.column_stack(
        [
            traj.times, traj.positions, traj.orientations, traj.velocities,
            traj.angular_velocities, traj.accelerations, traj.steering, traj.wheel_speed,
        ]
    )
    for row in table:
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def trajectory_from_text(text: str) -> Trajectory:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(TRAJ_HEADER + " dt="):
        raise FormatError("not a trajectory file (bad header)")
    try:
        dt = float(lines[0].split("dt=", 1)[1])
        rows = [[float(v) for v in ln.split()] for ln in lines[1:] if ln.strip() and not ln.startswith("#")]
        table = np.array(rows, dtype=float)
    except ValueError as exc:
        raise FormatError(f"malformed trajectory file: {exc}") from exc
    if table.ndim != 2 or table.shape[1] != len(TRAJ_COLUMNS):
        raise FormatError(f"trajectory rows must have {len(TRAJ_COLUMNS)} fields")
    return Trajectory(
        table[:, 0], table[:, 1:4], table[:, 4:8], table[:, 8:11], table[:, 11:14],
        table[:, 14:17], table[:, 17], table[:, 18], dt=dt,
    )


def save_trajectory(traj: Trajectory, path) -> None:
    Path(path).write_text(trajectory_to_text(traj))


def load_trajectory(path) -> Trajectory:
    return trajectory_from_text(Path(path).read_text())


# ---------------------------------------------------------------------------
# raw logs and resampling

RAW_CHANNELS = {
    "position": 3,
    "orientation": 4,
    "velocity": 3,
    "angular_velocity": 3,
    "acceleration": 3,
    "steering": 1,
    "wheel_speed": 1,
}


@dataclass(eq=False)
class RawLog:
    """Irregularly timed channels, each with its own timestamps.

    ``channels[name] = (times (M,), values (M, k))``.
    """

    channels: dict[str, tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        fixed = {}
        for name, k in RAW_CHANNELS.items():
            if name not in self.channels:
                raise DataError(f"raw log is missing channel {name!r}")
            t, v = self.channels[name]
            t = np.asarray(t, dtype=float).reshape(-1)
            v = np.asarray(v, dtype=float).reshape(t.size, k)
            if t.size < 2:
                raise InsufficientCoverage(f"channel {name} has fewer than two samples")
            if np.any(np.diff(t) < 0):
                raise DataError(f"channel {name} timestamps decrease")
            fixed[name] = (t, v)
        self.channels = fixed

    @classmethod
    def from_samples(cls, times, **values) -> "RawLog":
        """All channels sampled at the same ``times``."""
        return cls({name: (times, values[name]) for name in RAW_CHANNELS})

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "RawLog":
        return cls.from_samples(
            traj.times,
            position=traj.positions,
            orientation=traj.orientations,
            velocity=traj.velocities,
            angular_velocity=traj.angular_velocities,
            acceleration=traj.accelerations,
            steering=traj.steering,
            wheel_speed=traj.wheel_speed,
        )


def _interp_channel(
    t_src: np.ndarray, v_src: np.ndarray, t_out: np.ndarray, v_interp: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Linear interpolation of ``v_interp`` (default ``v_src``); outputs that hit a
    source sample exactly take the ``v_src`` row. Also returns the hit mask."""
    v_interp = v_src if v_interp is None else v_interp
    out = np.column_stack([np.interp(t_out, t_src, v_interp[:, j]) for j in range(v_src.shape[1])])
    # exact source samples pass through unchanged
    exact = np.zeros(t_out.size, dtype=bool)
    idx = np.clip(np.searchsorted(t_src, t_out), 0, t_src.size - 1)
    for cand in (idx, np.clip(idx - 1, 0, t_src.size - 1)):
        hit = np.abs(t_src[cand] - t_out) <= 1e-9
        out[hit] = v_src[cand[hit]]
        exact |= hit
    return out, exact


def resample(log: RawLog, rate: float = 10.0, start: float | None = None, stop: float | None = None) -> Trajectory:
    """Linear interpolation of every channel onto a uniform ``rate`` Hz grid.

    The window defaults to the span covered by all channels. Quaternions are
    aligned to one hemisphere, interpolated componentwise and renormalised;
    steering is unwrapped first. A gap longer than ``3 / rate`` inside the
    window raises :class:`InsufficientCoverage`.
    """
    if not rate > 0:
        raise DataError("rate must be positive")
    dt = 1.0 / rate
    t0 = max(t[0] for t, _ in log.channels.values()) if start is None else float(start)
    t1 = min(t[-1] for t, _ in log.channels.values()) if stop is None else float(stop)
    n = int(math.floor((t1 - t0) / dt + 1e-9)) + 1
    if n < 2:
        raise InsufficientCoverage("resampling window shorter than one step")
    t_out = t0 + np.arange(n) * dt

    out = {}
    for name, (t, v) in log.channels.items():
        if t[0] > t_out[0] + 1e-9 or t[-1] < t_out[-1] - 1e-9:
            raise InsufficientCoverage(f"channel {name} does not span [{t0}, {t_out[-1]}]")
        lo = max(np.searchsorted(t, t_out[0], side="right") - 1, 0)
        hi = min(np.searchsorted(t, t_out[-1], side="left"), t.size - 1)
        gaps = np.diff(t[lo:hi + 1])
        if gaps.size and gaps.max() > 3.0 * dt + 1e-12:
            raise InsufficientCoverage(f"channel {name} has a {gaps.max():.3f} s gap")
        v_interp = v
        if name == "orientation":
            v_interp = v.copy()
            for i in range(1, len(v)):
                if v_interp[i] @ v_interp[i - 1] < 0:
                    v_interp[i] = -v_interp[i]
        elif name == "steering":
            v = v_interp = np.unwrap(v, axis=0)
        out[name], exact = _interp_channel(t, v, t_out, v_interp)
        if name == "orientation":
            q_exact = exact

    q = out["orientation"]
    norms = np.linalg.norm(q, axis=1, keepdims=True)
    keep = q_exact[:, None] & (np.abs(norms - 1.0) < 1e-12)
    q = np.where(keep, q, q / norms)
    return Trajectory(
        t_out, out["position"], q, out["velocity"], out["angular_velocity"],
        out["acceleration"], out["steering"][:, 0], out["wheel_speed"][:, 0], dt=dt,
    )


def chunk(traj: Trajectory, horizon_s: float, stride_s: float | None = None) -> list[Trajectory]:
    """Cut consecutive windows of ``horizon_s / dt + 1`` states.

    Neighbouring windows share their boundary state; a trailing remainder
    shorter than a full window is dropped.
    """
    steps = int(round(horizon_s / traj.dt))
    if steps < 1 or abs(steps * traj.dt - horizon_s) > 1e-9:
        raise DataError(f"horizon {horizon_s} s is not a multiple of dt={traj.dt}")
    stride = steps
    if stride_s is not None:
        stride = int(round(stride_s / traj.dt))
        if stride < 1 or abs(stride * traj.dt - stride_s) > 1e-9:
            raise DataError(f"stride {stride_s} s is not a multiple of dt={traj.dt}")
    return [traj.slice(s, s + steps + 1) for s in range(0, len(traj) - steps, stride)]


# ---------------------------------------------------------------------------
# manifests and splits


@dataclass
class DatasetManifest:
    dataset_id: str
    map_file: str
    trajectories: dict[str, str]  # id -> file, insertion ordered
    horizon_s: float
    splits: dict[str, str] = field(default_factory=dict)  # id -> train/val/test
    fractions: tuple[float, float, float] = (1.0, 0.0, 0.0)
    seed: int | None = None
    generator: dict | None = None

    def __post_init__(self):
        for tid, s in self.splits.items():
            if s not in SPLITS:
                raise DataError(f"unknown split {s!r} for {tid}")
            if tid not in self.trajectories:
                raise DataError(f"split assigned to unknown trajectory {tid}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise DataError("split fractions must sum to 1")

    def ids(self, split: str | None = None) -> list[str]:
        if split is None:
            return list(self.trajectories)
        return [t for t in self.trajectories if self.splits.get(t) == split]

    def to_json(self) -> str:
        doc = {
            "format": "offroad-manifest 1",
            "dataset_id": self.dataset_id,
            "map_file": self.map_file,
            "horizon_s": self.horizon_s,
            "trajectories": [[k, v] for k, v in self.trajectories.items()],
            "splits": self.splits,
            "fractions": list(self.fractions),
            "seed": self.seed,
            "generator": self.generator,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        try:
            doc = json.loads(text)
            if doc.get("format") != "offroad-manifest 1":
                raise FormatError("not a dataset manifest")
            return cls(
                doc["dataset_id"],
                doc["map_file"],
                {k: v for k, v in doc["trajectories"]},
                float(doc["horizon_s"]),
                dict(doc.get("splits", {})),
                tuple(doc.get("fractions", (1.0, 0.0, 0.0))),
                doc.get("seed"),
                doc.get("generator"),
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"malformed manifest: {exc}") from exc


def _unit_hash(seed: int, key: str) -> float:
    digest = hashlib.sha256(f"{seed}:{key}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64


def split(manifest: DatasetManifest, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> DatasetManifest:
    """Assign train/val/test by a seeded hash of each trajectory id.

    Assignment depends only on ``(seed, id, fractions)``, so adding
    trajectories never moves existing ones.
    """
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise DataError("fractions must be three non-negative numbers summing to 1")
    edges = np.cumsum(fr)
    splits = {}
    for tid in manifest.trajectories:
        u = _unit_hash(seed, tid)
        k = int(np.searchsorted(edges, u, side="right"))
        splits[tid] = SPLITS[min(k, 2)]
    return dataclasses.replace(manifest, splits=splits, fractions=fr)


# ---------------------------------------------------------------------------
# vehicle params config


def params_to_text(p: VehicleParams) -> str:
    return "".join(f"{k} = {getattr(p, k)!r}\n" for k in p.__dataclass_fields__)


def params_from_text(text: str) -> VehicleParams:
    values = {}
    for ln in text.splitlines():
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        if "=" not in ln:
            raise FormatError(f"expected 'key = value', got {ln!r}")
        k, v = (s.strip() for s in ln.split("=", 1))
        if k not in VehicleParams.__dataclass_fields__:
            raise FormatError(f"unknown vehicle parameter {k!r}")
        try:
            values[k] = float(v)
        except ValueError as exc:
            raise FormatError(f"{k}: {exc}") from exc
    return VehicleParams(**values)


def load_params(path) -> VehicleParams:
    return params_from_text(Path(path).read_text())


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs of the synthetic driving generator.

    ``mismatch`` scales fields of the vehicle that *drives* the data relative
    to the nominal :class:`VehicleParams` handed to :func:`generate_synthetic`
    (e.g. ``{"friction": 0.7}``); analytic models benchmarked with nominal
    parameters then carry a system-identification error.
    """

    count: int = 50
    horizon_s: float = 4.0
    dt: float = DEFAULT_DT
    roughness: float = 0.45  # terrain height std, m
    correlation_length: float = 3.0  # m
    map_resolution: float = 0.5
    speed_range: tuple[float, float] = (6.5, 9.5)
    speed_variation: float = 1.0  # amplitude of the wheel-speed sinusoid, m/s
    steering: str = "sine"  # or "straight"
    steer_amplitude: float = 0.15  # minimum peak steering of the sine script, rad
    steer_frequency: tuple[float, float] = (0.1, 0.3)  # Hz
    noise: float = 0.0  # process noise std on V_x, V_y (m/s) and omega_z (rad/s) per step
    mismatch: tuple[tuple[str, float], ...] = ()
    warmup_s: float = 1.0
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        lo, hi = self.speed_range
        problems = []
        if self.count < 1:
            problems.append("count must be >= 1")
        if not (0 < lo <= hi):
            problems.append("speed range must be positive and ordered")
        if self.roughness < 0:
            problems.append("roughness must be >= 0")
        if self.correlation_length <= 0 or self.map_resolution <= 0:
            problems.append("correlation length and resolution must be positive")
        if self.steering not in ("sine", "straight"):
            problems.append(f"unknown steering script {self.steering!r}")
        if self.steer_amplitude < 0 or self.noise < 0 or self.speed_variation < 0:
            problems.append("amplitudes and noise must be >= 0")
        if self.speed_variation >= lo:
            problems.append("speed variation must stay below the minimum speed")
        steps = round(self.horizon_s / self.dt)
        if steps < 1 or abs(steps * self.dt - self.horizon_s) > 1e-9:
            problems.append("horizon must be a positive multiple of dt")
        for name, scale in self.mismatch:
            if name not in VehicleParams.__dataclass_fields__ or not scale > 0:
                problems.append(f"bad mismatch entry {name}={scale}")
        if problems:
            raise ConfigInvalid("; ".join(problems))

    def to_dict(self) -> dict:
        """JSON-ready form (tuples become lists)."""
        d = dataclasses.asdict(self)
        for key in ("speed_range", "steer_frequency", "fractions"):
            d[key] = list(d[key])
        d["mismatch"] = [list(m) for m in self.mismatch]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticConfig":
        d = dict(d)
        for key in ("speed_range", "steer_frequency", "fractions"):
            if key in d:
                d[key] = tuple(d[key])
        if "mismatch" in d:
            d["mismatch"] = tuple((str(k), float(v)) for k, v in d["mismatch"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigInvalid(str(exc)) from exc


TIERS = ("nominal", "fast", "aggressive")


def tier_config(tier: str = "nominal", **overrides) -> SyntheticConfig:
    """Aggressiveness tiers: nominal, +50% speed, +100% speed and doubled steering."""
    base = SyntheticConfig(**overrides)
    lo, hi = base.speed_range
    if tier == "nominal":
        return base
    if tier == "fast":
        return dataclasses.replace(base, speed_range=(1.5 * lo, 1.5 * hi), speed_variation=1.5 * base.speed_variation)
    if tier == "aggressive":
        return dataclasses.replace(
            base,
            speed_range=(2.0 * lo, 2.0 * hi),
            speed_variation=2.0 * base.speed_variation,
            steer_amplitude=2.0 * base.steer_amplitude,
        )
    raise ConfigInvalid(f"unknown tier {tier!r}; expected one of {TIERS}")


@dataclass(eq=False)
class SyntheticDataset:
    map: ElevationMap
    manifest: DatasetManifest
    trajectories: dict[str, Trajectory]


def random_terrain(rng: np.random.Generator, size: int, resolution: float, roughness: float, corr: float) -> np.ndarray:
    """Gaussian-filtered white noise scaled to height std ``roughness`` (float32 values)."""
    if roughness == 0:
        return np.zeros((size, size))
    noise = rng.standard_normal((size, size))
    k = np.fft.fftfreq(size, d=resolution)
    kx, ky = np.meshgrid(k, k)
    kernel = np.exp(-2.0 * (np.pi * corr) ** 2 * (kx**2 + ky**2))
    field_ = np.real(np.fft.ifft2(np.fft.fft2(noise) * kernel))
    field_ = field_ - field_.mean()
    field_ *= roughness / field_.std()
    return field_.astype(np.float32).astype(float)


def _true_params(params: VehicleParams, cfg: SyntheticConfig) -> VehicleParams:
    if not cfg.mismatch:
        return params
    return params.replace(**{k: getattr(params, k) * s for k, s in cfg.mismatch})


def _control_script(rng: np.random.Generator, cfg: SyntheticConfig):
    v0 = rng.uniform(*cfg.speed_range)
    fv = rng.uniform(0.05, 0.2)
    pv = rng.uniform(0, 2 * np.pi)
    amp = cfg.steer_amplitude * rng.uniform(1.0, 1.3) if cfg.steering == "sine" else 0.0
    fs = rng.uniform(*cfg.steer_frequency)
    ps = rng.uniform(0, 2 * np.pi)

    def control(t: float) -> ControlInput:
        return ControlInput(
            amp * math.sin(2 * math.pi * fs * t + ps),
            v0 + cfg.speed_variation * math.sin(2 * math.pi * fv * t + pv),
        )

    return control


def _drive(
    rng: np.random.Generator,
    emap: ElevationMap,
    params: VehicleParams,
    cfg: SyntheticConfig,
    spawn_radius: float,
    contact: ContactConfig,
) -> Trajectory:
    control = _control_script(rng, cfg)
    r = spawn_radius * math.sqrt(rng.uniform())
    a = rng.uniform(0, 2 * np.pi)
    yaw = rng.uniform(-np.pi, np.pi)
    xy = np.array([r * math.cos(a), r * math.sin(a)])
    pos, q = project_pose(emap, xy, yaw, params.front_axle_distance, params.rear_axle_distance, contact.track_width, contact.clearance)
    u0 = control(-cfg.warmup_s)
    rest = quat_to_matrix(q).T @ np.array([0.0, 0.0, params.gravity])
    state = VehicleState(-cfg.warmup_s, pos, q, [u0.wheel_speed, 0, 0], [0, 0, 0], rest)

    dt = cfg.dt
    warm = int(round(cfg.warmup_s / dt))
    steps = int(round(cfg.horizon_s / dt))
    times = np.arange(steps + 1) * dt
    states, controls = [], []
    for k in range(-warm, steps + 1):
        t = times[k] if k >= 0 else k * dt
        u = control(t)
        if k >= 0:
            states.append(state)
            controls.append(u)
            if k == steps:
                break
        noise = rng.normal(0.0, cfg.noise, 3) if cfg.noise > 0 else None
        dist = None if noise is None else np.array([noise[0], noise[1], 0.0, noise[2]])
        state = advance(ModelKind.SLIP3D, state, u, emap, params, dt, contact=contact, disturbance=dist)
    recorded = [
        VehicleState(t, s.position, s.orientation, s.body_velocity, s.body_angular_velocity, s.body_acceleration)
        for t, s in zip(times, states)
    ]
    return Trajectory.from_states(recorded, controls, dt=dt)


def generate_synthetic(
    seed: int,
    config: SyntheticConfig = SyntheticConfig(),
    params: VehicleParams = VehicleParams(),
    dataset_id: str = "synthetic",
    contact: ContactConfig = ContactConfig(),
) -> SyntheticDataset:
    """Seeded terrain plus Slip3D-driven trajectories over it.

    Each trajectory starts at a random pose near the map centre, drives a
    warm-up second (so its first recorded state has settled slip and a
    meaningful acceleration), then records ``horizon_s`` at ``dt``.
    """
    cfg = config
    rng = np.random.default_rng(seed)
    v_max = cfg.speed_range[1] + cfg.speed_variation
    travel = v_max * (cfg.horizon_s + cfg.warmup_s)
    spawn_radius = 10.0
    half = spawn_radius + travel + 15.0
    size = int(math.ceil(2 * half / cfg.map_resolution)) + 1
    origin = (-0.5 * (size - 1) * cfg.map_resolution,) * 2
    emap = ElevationMap(origin, cfg.map_resolution, random_terrain(rng, size, cfg.map_resolution, cfg.roughness, cfg.correlation_length))

    true = _true_params(params, cfg)
    trajectories: dict[str, Trajectory] = {}
    for i in range(cfg.count):
        for _attempt in range(20):
            try:
                traj = _drive(rng, emap, true, cfg, spawn_radius, contact)
                break
            except OutOfBounds:
                continue
        else:  # pragma: no cover - map is sized for the worst case
            raise ConfigInvalid("vehicle keeps leaving the generated map")
        trajectories[f"traj_{i:04d}"] = traj

    manifest = DatasetManifest(
        dataset_id,
        "map.bin",
        {tid: f"{tid}.txt" for tid in trajectories},
        cfg.horizon_s,
        seed=seed,
        generator=cfg.to_dict(),
    )
    manifest = split(manifest, cfg.fractions, seed)
    return SyntheticDataset(emap, manifest, trajectories)


def write_dataset(ds: SyntheticDataset, directory) -> Path:
    """Write map, trajectories and manifest; returns the manifest path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_map(ds.map, d / ds.manifest.map_file)
    for tid, fname in ds.manifest.trajectories.items():
        save_trajectory(ds.trajectories[tid], d / fname)
    path = d / "manifest.json"
    path.write_text(ds.manifest.to_json())
    return path


def load_dataset(manifest_path) -> SyntheticDataset:
    p = Path(manifest_path)
    manifest = DatasetManifest.from_json(p.read_text())
    base = p.parent
    emap = load_map(base / manifest.map_file)
    trajs = {tid: load_trajectory(base / f) for tid, f in manifest.trajectories.items()}
    return SyntheticDataset(emap, manifest, trajs)


def trajectory_mean_speed(traj: Trajectory) -> float:
    return float(np.linalg.norm(traj.velocities, axis=1).mean())
