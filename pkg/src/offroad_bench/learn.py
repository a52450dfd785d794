"""Small tanh MLP with hand-written backprop, used as the learned dynamics model.

Feature layout (version 1), before standardisation::

    [V_b (3), omega_b (3), roll, pitch, patch (size*size, row-major), steering, wheel_speed]

Targets are the one-step changes ``(dV_b, domega_b)``. Inputs and targets are
both standardised with statistics from the training split; the stored
network maps standardised features to standardised targets and
:func:`predict_delta` undoes the target scaling.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import ControlInput, Trajectory, VehicleState, euler_from_quat
from .errors import Diverged, EmptyDataset, FormatError, ShapeMismatch

FEATURE_LAYOUT_VERSION = 1
OUTPUT_DIM = 6
WEIGHTS_MAGIC = b"MLPW"
WEIGHTS_VERSION = 1
ACTIVATIONS = ("tanh", "identity")


def feature_dim(patch_size: int) -> int:
    return 3 + 3 + 2 + patch_size * patch_size + 2


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        std = np.asarray(self.std, dtype=float)
        if mean.shape != std.shape or mean.ndim != 1:
            raise ShapeMismatch("standardizer mean/std shapes differ")
        if np.any(std <= 0) or not np.all(np.isfinite(std)) or not np.all(np.isfinite(mean)):
            raise ShapeMismatch("standardizer std must be positive and finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def identity(cls, n: int) -> "Standardizer":
        return cls(np.zeros(n), np.ones(n))

    @classmethod
    def fit(cls, data: np.ndarray, floor: float = 1e-8) -> "Standardizer":
        mean = data.mean(axis=0)
        std = data.std(axis=0)
        std = np.where(std < floor, 1.0, std)
        return cls(mean, std)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def invert(self, z: np.ndarray) -> np.ndarray:
        return z * self.std + self.mean


@dataclass(eq=False)
class MLPWeights:
    layers: list[tuple[np.ndarray, np.ndarray]]
    activations: list[str]
    input_stats: Standardizer
    output_stats: Standardizer
    patch_size: int = 15
    patch_resolution: float = 0.5

    def __post_init__(self):
        if len(self.layers) != len(self.activations) or not self.layers:
            raise ShapeMismatch("one activation per layer required")
        prev = None
        for i, (W, b) in enumerate(self.layers):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ShapeMismatch(f"layer {i}: weight {W.shape} / bias {b.shape} inconsistent")
            if prev is not None and W.shape[1] != prev:
                raise ShapeMismatch(f"layer {i} expects {W.shape[1]} inputs, previous gives {prev}")
            prev = W.shape[0]
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ShapeMismatch(f"unknown activation {a!r}")
        if self.input_stats.mean.shape != (self.input_dim,):
            raise ShapeMismatch("input standardizer does not match the first layer")
        if self.output_stats.mean.shape != (self.output_dim,):
            raise ShapeMismatch("output standardizer does not match the last layer")

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    def copy(self) -> "MLPWeights":
        return MLPWeights(
            [(W.copy(), b.copy()) for W, b in self.layers],
            list(self.activations),
            self.input_stats,
            self.output_stats,
            self.patch_size,
            self.patch_resolution,
        )

    def equals(self, other: "MLPWeights") -> bool:
        if self.activations != other.activations or len(self.layers) != len(other.layers):
            return False
        same = all(
            np.array_equal(W1, W2) and np.array_equal(b1, b2)
            for (W1, b1), (W2, b2) in zip(self.layers, other.layers)
        )
        stats = all(
            np.array_equal(getattr(s1, k), getattr(s2, k))
            for s1, s2 in ((self.input_stats, other.input_stats), (self.output_stats, other.output_stats))
            for k in ("mean", "std")
        )
        return (
            same
            and stats
            and self.patch_size == other.patch_size
            and self.patch_resolution == other.patch_resolution
        )


def zero_weights(input_dim: int, hidden: Sequence[int] = (), output_dim: int = OUTPUT_DIM) -> MLPWeights:
    dims = [input_dim, *hidden, output_dim]
    layers = [(np.zeros((dims[i + 1], dims[i])), np.zeros(dims[i + 1])) for i in range(len(dims) - 1)]
    acts = ["tanh"] * len(hidden) + ["identity"]
    return MLPWeights(layers, acts, Standardizer.identity(input_dim), Standardizer.identity(output_dim))


def init_weights(
    input_dim: int,
    hidden: Sequence[int],
    rng: np.random.Generator,
    output_dim: int = OUTPUT_DIM,
) -> MLPWeights:
    """Glorot-uniform weights, zero biases."""
    dims = [input_dim, *hidden, output_dim]
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        layers.append((rng.uniform(-limit, limit, size=(fan_out, fan_in)), np.zeros(fan_out)))
    acts = ["tanh"] * len(hidden) + ["identity"]
    return MLPWeights(layers, acts, Standardizer.identity(input_dim), Standardizer.identity(output_dim))


# ---------------------------------------------------------------------------
# forward / backward


def _check_input(weights: MLPWeights, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != weights.input_dim:
        raise ShapeMismatch(f"expected {weights.input_dim} features, got {x.shape[-1]}")
    return x


def _forward_cache(weights: MLPWeights, x: np.ndarray):
    acts = [x]
    h = x
    for (W, b), act in zip(weights.layers, weights.activations):
        z = h @ W.T + b
        h = np.tanh(z) if act == "tanh" else z
        acts.append(h)
    return acts


def forward(weights: MLPWeights, features: np.ndarray) -> np.ndarray:
    """Raw network output for one feature vector or a batch of them (rows)."""
    x = _check_input(weights, features)
    return _forward_cache(weights, x)[-1]


def backward(weights: MLPWeights, features: np.ndarray, target: np.ndarray):
    """Mean-squared error and its exact gradient.

    Returns ``(loss, grads)`` with ``grads[i] = (dW_i, db_i)``. The mean runs
    over every output entry of every sample in the batch.
    """
    x = _check_input(weights, features)
    t = np.asarray(target, dtype=float)
    batched = x.ndim == 2
    if not batched:
        x = x[None, :]
        t = t[None, :]
    if t.shape != (x.shape[0], weights.output_dim):
        raise ShapeMismatch(f"target shape {t.shape} does not match output {weights.output_dim}")

    acts = _forward_cache(weights, x)
    err = acts[-1] - t
    loss = float(np.mean(err * err))
    delta = 2.0 * err / err.size

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(weights.layers)  # type: ignore[list-item]
    for i in range(len(weights.layers) - 1, -1, -1):
        W, _ = weights.layers[i]
        if weights.activations[i] == "tanh":
            delta = delta * (1.0 - acts[i + 1] ** 2)
        grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
        if i:
            delta = delta @ W
    return loss, grads


def predict_delta(weights: MLPWeights, standardized_features: np.ndarray) -> np.ndarray:
    """Network output mapped back to physical units."""
    return weights.output_stats.invert(forward(weights, standardized_features))


# ---------------------------------------------------------------------------
# features


def raw_features(state: VehicleState, u: ControlInput, patch) -> np.ndarray:
    e = euler_from_quat(state.orientation)
    return np.concatenate(
        [
            state.body_velocity,
            state.body_angular_velocity,
            [e.roll, e.pitch],
            np.asarray(patch.heights, dtype=float).reshape(-1),
            [u.steering, u.wheel_speed],
        ]
    )


def featurize(state: VehicleState, u: ControlInput, patch, stats: Standardizer) -> np.ndarray:
    x = raw_features(state, u, patch)
    if stats.mean.shape != x.shape:
        raise ShapeMismatch(f"stats expect {stats.mean.size} features, state gives {x.size}")
    return stats.apply(x)


def transition_samples(
    trajectories: Iterable[Trajectory], emap, patch_size: int, patch_resolution: float
) -> tuple[np.ndarray, np.ndarray]:
    """Raw (features, (dV, domega)) pairs for every consecutive state pair."""
    from .terrain import extract_patch

    xs, ys = [], []
    for traj in trajectories:
        for i in range(len(traj) - 1):
            s = traj.state(i)
            yaw = euler_from_quat(s.orientation).yaw
            patch = extract_patch(emap, s.position[:2], yaw, patch_size, patch_resolution)
            xs.append(raw_features(s, traj.control(i), patch))
            ys.append(
                np.concatenate(
                    [
                        traj.velocities[i + 1] - traj.velocities[i],
                        traj.angular_velocities[i + 1] - traj.angular_velocities[i],
                    ]
                )
            )
    if not xs:
        raise EmptyDataset("no transitions in the given trajectories")
    return np.array(xs), np.array(ys)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 64
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)
    validation_fraction: float = 0.2
    optimizer: str = "adam"  # or "sgd"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainHistory:
    initial_train: float
    initial_val: float
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)

    def to_text(self) -> str:
        lines = ["# epoch train_loss val_loss", f"0 {self.initial_train!r} {self.initial_val!r}"]
        for i, (a, b) in enumerate(zip(self.train_loss, self.val_loss), start=1):
            lines.append(f"{i} {a!r} {b!r}")
        return "\n".join(lines) + "\n"


def split_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_val = min(n - 1, max(1, int(round(fraction * n))))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


class _Adam:
    def __init__(self, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(
    features: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig = TrainConfig(),
    patch_size: int = 15,
    patch_resolution: float = 0.5,
) -> tuple[MLPWeights, TrainHistory]:
    """Fit an MLP to raw ``(features, targets)`` by seeded mini-batch descent.

    Losses in the history are MSE in standardised target units; the initial
    entry is the untrained network's loss. A non-finite loss raises
    :class:`Diverged`.
    """
    X = np.asarray(features, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyDataset("training set is empty")
    if Y.shape != (X.shape[0], OUTPUT_DIM):
        raise ShapeMismatch(f"targets must be ({X.shape[0]}, {OUTPUT_DIM}), got {Y.shape}")
    if X.shape[0] < 2:
        raise EmptyDataset("need at least two samples to hold one out")

    tr, va = split_indices(X.shape[0], cfg.validation_fraction, cfg.seed)
    in_stats = Standardizer.fit(X[tr])
    out_stats = Standardizer.fit(Y[tr])
    Xtr, Ytr = in_stats.apply(X[tr]), out_stats.apply(Y[tr])
    Xva, Yva = in_stats.apply(X[va]), out_stats.apply(Y[va])

    rng = np.random.default_rng(cfg.seed)
    w = init_weights(X.shape[1], cfg.hidden, rng)
    w = MLPWeights(w.layers, w.activations, in_stats, out_stats, patch_size, float(patch_resolution))
    params = [p for layer in w.layers for p in layer]
    opt = _Adam(cfg.learning_rate) if cfg.optimizer == "adam" else None

    history = TrainHistory(backward(w, Xtr, Ytr)[0], backward(w, Xva, Yva)[0])
    n = Xtr.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = backward(w, Xtr[idx], Ytr[idx])
            if not math.isfinite(loss):
                raise Diverged(f"non-finite training loss in epoch {epoch + 1}")
            flat = [g for layer in grads for g in layer]
            if opt is None:
                for p, g in zip(params, flat):
                    p -= cfg.learning_rate * g
            else:
                opt.step(params, flat)
        with np.errstate(over="ignore", invalid="ignore"):
            history.train_loss.append(backward(w, Xtr, Ytr)[0])
            history.val_loss.append(backward(w, Xva, Yva)[0])
        if not (math.isfinite(history.train_loss[-1]) and math.isfinite(history.val_loss[-1])):
            raise Diverged(f"non-finite loss after epoch {epoch + 1}")
    return w, history


# ---------------------------------------------------------------------------
# serialization


def weights_to_bytes(w: MLPWeights) -> bytes:
    header = {
        "dims": [w.input_dim] + [W.shape[0] for W, _ in w.layers],
        "activations": list(w.activations),
        "patch_size": w.patch_size,
        "patch_resolution": w.patch_resolution,
        "feature_layout": FEATURE_LAYOUT_VERSION,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    chunks = [WEIGHTS_MAGIC, struct.pack("<II", WEIGHTS_VERSION, len(hbytes)), hbytes]
    for arr in (w.input_stats.mean, w.input_stats.std, w.output_stats.mean, w.output_stats.std):
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    for W, b in w.layers:
        chunks.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(chunks)


def weights_from_bytes(data: bytes) -> MLPWeights:
    if data[:4] != WEIGHTS_MAGIC:
        raise FormatError("not an MLP weight file")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != WEIGHTS_VERSION:
        raise FormatError(f"unsupported weight file version {version}")
    try:
        header = json.loads(data[12:12 + hlen].decode())
        dims = [int(d) for d in header["dims"]]
        if header.get("feature_layout") != FEATURE_LAYOUT_VERSION:
            raise FormatError("unsupported feature layout")
    except (ValueError, KeyError) as exc:
        raise FormatError(f"corrupt weight header: {exc}") from exc
    body = data[12 + hlen:]
    if len(body) % 8:
        raise FormatError("weight file truncated")
    buf = np.frombuffer(body, dtype="<f8")
    pos = 0

    def take(n, shape=None):
        nonlocal pos
        if pos + n > buf.size:
            raise FormatError("weight file truncated")
        out = buf[pos:pos + n].astype(float)
        pos += n
        return out.reshape(shape) if shape else out

    d_in, d_out = dims[0], dims[-1]
    stats = [take(d_in), take(d_in), take(d_out), take(d_out)]
    layers = []
    for a, b in zip(dims[:-1], dims[1:]):
        layers.append((take(a * b, (b, a)), take(b)))
    if pos != buf.size:
        raise FormatError("trailing data in weight file")
    return MLPWeights(
        layers,
        list(header["activations"]),
        Standardizer(stats[0], stats[1]),
        Standardizer(stats[2], stats[3]),
        int(header["patch_size"]),
        float(header["patch_resolution"]),
    )


def save_weights(w: MLPWeights, path) -> None:
    Path(path).write_bytes(weights_to_bytes(w))


def load_weights(path) -> MLPWeights:
    return weights_from_bytes(Path(path).read_bytes())
