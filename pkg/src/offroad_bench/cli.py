"""Command-line entry point.

Subcommands map one-to-one onto library operations::

    generate    synthetic terrain + trajectories   (dataio.generate_synthetic)
    fit-energy  Gaussian energy model               (energy.fit)
    score       free energy of trajectories         (energy.energy)
    train       learned dynamics model              (learn.train)
    rollout     open-loop model rollout             (rollout.rollout)
    bench       H-MNE table over a dataset          (bench.evaluate)
    trend       cubic fit of error vs energy        (bench.trend)
    report      render a saved benchmark CSV        (bench.render_report)

Every subcommand accepts ``--config FILE`` with ``key = value`` lines naming
the same options (``epochs = 100``); flags given on the command line win.
Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical error. On
failure a single ``error: <Class>: <Type>: <message>`` line goes to stderr.
Outputs are written to a temporary file and renamed into place, so a failed
run never leaves a partial file behind.
"""

from __future__ import annotations

import argparse
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import bench, dataio, energy, learn
from .core import VehicleParams
from .errors import DataError, NumericalError, OffroadError
from .models import ModelKind
from .rollout import rollout

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def write_atomic(path, data: str | bytes) -> None:
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _input(path: str | None, what: str) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _output(path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.parent.exists():
        raise UsageError(f"output directory does not exist: {p.parent}")
    return p


def _csv_list(text: str) -> list[str]:
    return [t for t in (s.strip() for s in text.split(",")) if t]


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in _csv_list(text))


def _mismatch(text: str) -> tuple[tuple[str, float], ...]:
    out = []
    for item in _csv_list(text):
        k, _, v = item.partition("=")
        out.append((k.strip(), float(v)))
    return tuple(out)


def _params(args) -> VehicleParams:
    p = _input(getattr(args, "params", None), "vehicle params file")
    return dataio.load_params(p) if p else VehicleParams()


def _select(ds: dataio.SyntheticDataset, split: str) -> dict:
    ids = ds.manifest.ids(None if split == "all" else split)
    if not ids:
        raise DataError(f"split {split!r} of the dataset is empty")
    return {i: ds.trajectories[i] for i in ids}


def read_config(path) -> dict[str, str]:
    out = {}
    for ln in Path(path).read_text().splitlines():
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        if "=" not in ln:
            raise UsageError(f"config line is not 'key = value': {ln!r}")
        k, v = (s.strip() for s in ln.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    out = Path(args.out)
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        raise UsageError(f"output directory must be new or empty: {out}")
    overrides = {}
    if args.count is not None:
        overrides["count"] = args.count
    if args.horizon is not None:
        overrides["horizon_s"] = args.horizon
    if args.noise is not None:
        overrides["noise"] = args.noise
    if args.roughness is not None:
        overrides["roughness"] = args.roughness
    if args.steer_amplitude is not None:
        overrides["steer_amplitude"] = args.steer_amplitude
    if args.steering is not None:
        overrides["steering"] = args.steering
    if args.speed_min is not None or args.speed_max is not None:
        base = dataio.SyntheticConfig().speed_range
        overrides["speed_range"] = (
            args.speed_min if args.speed_min is not None else base[0],
            args.speed_max if args.speed_max is not None else base[1],
        )
    if args.mismatch:
        overrides["mismatch"] = _mismatch(args.mismatch)
    cfg = dataio.tier_config(args.tier, **overrides)
    ds = dataio.generate_synthetic(args.seed, cfg, _params(args), dataset_id=args.dataset_id)

    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=out.parent, prefix=f".{out.name}."))
    try:
        dataio.write_dataset(ds, tmp)
        if out.exists():
            out.rmdir()
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    print(out / "manifest.json")
    return EXIT_OK


def cmd_fit_energy(args) -> int:
    src = _input(args.data, "manifest")
    dst = _output(args.out)
    ds = dataio.load_dataset(src)
    trajs = list(_select(ds, args.split).values())
    model = energy.fit(trajs, energy.FeatureSelection(_int_tuple(args.channels)), args.temperature)
    write_atomic(dst, energy.energy_model_to_text(model))
    return EXIT_OK


def cmd_score(args) -> int:
    model = energy.load_energy_model(_input(args.energy_model, "energy model"))
    paths = [_input(p, "trajectory") for p in args.trajectory]
    dst = _output(args.out)
    lines = [f"{p} {energy.energy(model, dataio.load_trajectory(p))!r}" for p in paths]
    text = "\n".join(lines) + "\n"
    if dst:
        write_atomic(dst, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_train(args) -> int:
    src = _input(args.data, "manifest")
    dst = _output(args.out)
    hist_path = _output(args.history)
    ds = dataio.load_dataset(src)
    trajs = list(_select(ds, args.split).values())
    res = args.patch_resolution if args.patch_resolution is not None else ds.map.resolution
    X, Y = learn.transition_samples(trajs, ds.map, args.patch_size, res)
    cfg = learn.TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        hidden=_int_tuple(args.hidden),
        validation_fraction=args.validation_fraction,
        optimizer=args.optimizer,
    )
    weights, history = learn.train(X, Y, cfg, args.patch_size, res)
    if not np.isfinite(history.val_loss[-1]):
        raise NumericalError("training diverged (non-finite validation loss)")
    write_atomic(dst, learn.weights_to_bytes(weights))
    if hist_path:
        write_atomic(hist_path, history.to_text())
    return EXIT_OK


def cmd_rollout(args) -> int:
    model = ModelKind.parse(args.model)
    dst = _output(args.out)
    weights = learn.load_weights(_input(args.weights, "weights")) if args.weights else None
    if args.data:
        ds = dataio.load_dataset(_input(args.data, "manifest"))
        if args.id not in ds.trajectories:
            raise DataError(f"no trajectory {args.id!r} in the dataset")
        gt, emap, sid = ds.trajectories[args.id], ds.map, args.id
    else:
        if not (args.trajectory and args.map):
            raise UsageError("give --data/--id or --trajectory/--map")
        gt = dataio.load_trajectory(_input(args.trajectory, "trajectory"))
        emap = dataio.load_map(_input(args.map, "map"))
        sid = Path(args.trajectory).stem
    res = rollout(model, gt, emap, _params(args), weights, args.substeps, source_id=sid)
    write_atomic(dst, dataio.trajectory_to_text(res.predicted))
    return EXIT_OK


def cmd_bench(args) -> int:
    src = _input(args.data, "manifest")
    models = [ModelKind.parse(m) for m in _csv_list(args.models)]
    weights = learn.load_weights(_input(args.weights, "weights")) if args.weights else None
    em = energy.load_energy_model(_input(args.energy_model, "energy model")) if args.energy_model else None
    dst, table, scatter = _output(args.out), _output(args.table), _output(args.scatter)
    if scatter and em is None:
        raise UsageError("--scatter needs --energy-model")
    ds = dataio.load_dataset(src)
    report = bench.evaluate(
        models, _select(ds, args.split), ds.map, _params(args), weights, em,
        dataset_id=ds.manifest.dataset_id, substeps=args.substeps, jobs=args.jobs,
    )
    write_atomic(dst, bench.report_to_csv(report))
    if table:
        write_atomic(table, bench.render_report(report))
    if scatter:
        write_atomic(scatter, bench.scatter_to_csv(report))
    return EXIT_OK


def cmd_trend(args) -> int:
    src = _input(args.scatter, "scatter file")
    dst = _output(args.out)
    model, group = ModelKind.parse(args.model), bench.StateGroup.parse(args.group)
    scores = bench.scatter_from_csv(src.read_text())
    pts = [(s.energy, s.errors[group]) for s in scores if s.model is model and s.energy is not None]
    fit = bench.trend(pts)
    text = bench.trend_to_text(fit, model, group)
    if dst:
        write_atomic(dst, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_report(args) -> int:
    src = _input(args.report, "report CSV")
    dst = _output(args.out)
    text = bench.render_report(bench.report_from_csv(src.read_text()))
    if dst:
        write_atomic(dst, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="offroad-bench",
        description="Off-road dynamics model benchmarks and trajectory aggressiveness scoring.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    subs = {}

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.set_defaults(func=fn)
        p.add_argument("--config", help="key = value file overriding defaults (flags win)")
        subs[name] = p
        return p

    p = add("generate", cmd_generate, "generate a synthetic dataset (map, trajectories, manifest)")
    p.add_argument("--out", required=True, help="new output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tier", default="nominal", choices=dataio.TIERS)
    p.add_argument("--dataset-id", default="synthetic")
    p.add_argument("--count", type=int)
    p.add_argument("--horizon", type=float, help="seconds per trajectory")
    p.add_argument("--noise", type=float, help="process noise std per step")
    p.add_argument("--roughness", type=float, help="terrain height std, m")
    p.add_argument("--steering", choices=("sine", "straight"))
    p.add_argument("--steer-amplitude", type=float, help="minimum steering peak, rad")
    p.add_argument("--speed-min", type=float)
    p.add_argument("--speed-max", type=float)
    p.add_argument("--mismatch", help="driving-vehicle parameter scales, e.g. friction=0.7,drive_gain=0.7")
    p.add_argument("--params", help="nominal vehicle params file")

    p = add("fit-energy", cmd_fit_energy, "fit the Gaussian free-energy model")
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--split", default="train", choices=("train", "val", "test", "all"))
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--channels", default="0,1,2", help="differentiated-state channel indices")
    p.add_argument("--out", required=True)

    p = add("score", cmd_score, "free energy E(tau) of trajectory files")
    p.add_argument("--energy-model", required=True)
    p.add_argument("--trajectory", required=True, nargs="+")
    p.add_argument("--out")

    p = add("train", cmd_train, "train the learned dynamics model")
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--split", default="train", choices=("train", "val", "test", "all"))
    p.add_argument("--out", required=True, help="weight file")
    p.add_argument("--history", help="per-epoch loss report")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--hidden", default="64,64")
    p.add_argument("--validation-fraction", type=float, default=0.2)
    p.add_argument("--optimizer", default="adam", choices=("adam", "sgd"))
    p.add_argument("--patch-size", type=int, default=15)
    p.add_argument("--patch-resolution", type=float)

    p = add("rollout", cmd_rollout, "roll a model out against one trajectory")
    p.add_argument("--model", required=True)
    p.add_argument("--data", help="dataset manifest (with --id)")
    p.add_argument("--id")
    p.add_argument("--trajectory")
    p.add_argument("--map")
    p.add_argument("--weights")
    p.add_argument("--params")
    p.add_argument("--substeps", type=int, default=1)
    p.add_argument("--out", required=True)

    p = add("bench", cmd_bench, "benchmark models over a dataset (H-MNE table)")
    p.add_argument("--models", default="noslip3d,slip3d")
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--split", default="all", choices=("train", "val", "test", "all"))
    p.add_argument("--weights")
    p.add_argument("--energy-model")
    p.add_argument("--params")
    p.add_argument("--substeps", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="report CSV")
    p.add_argument("--table", help="fixed-width text table")
    p.add_argument("--scatter", help="per-trajectory energy/error CSV (needs --energy-model)")

    p = add("trend", cmd_trend, "fit a cubic of H-MNE against energy")
    p.add_argument("--scatter", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--group", default="accel")
    p.add_argument("--out")

    p = add("report", cmd_report, "render a benchmark CSV as a table")
    p.add_argument("--report", required=True)
    p.add_argument("--out")
    return parser, subs


def _config_arg(argv: list[str]) -> str | None:
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _apply_config(sp: argparse.ArgumentParser, path: str) -> None:
    """Install config values as defaults of ``sp`` so explicit flags still win."""
    cfg = read_config(_input(path, "config file"))
    known = {a.dest for a in sp._actions}
    unknown = set(cfg) - known - {"config", "help"}
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for a in sp._actions:
        if a.dest in cfg:
            a.required = False
            if a.type is not None:
                cfg[a.dest] = a.type(cfg[a.dest])
            if a.choices is not None and cfg[a.dest] not in a.choices:
                raise UsageError(f"config {a.dest} must be one of {', '.join(map(str, a.choices))}")
    sp.set_defaults(**cfg)


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        config = _config_arg(argv)
        if config is not None and argv[0] in subs:
            try:
                _apply_config(subs[argv[0]], config)
            except ValueError as exc:
                raise UsageError(f"bad config value: {exc}") from exc
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return int(exc.code or 0)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        print(f"error: UsageError: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        print(f"error: NumericalError: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, OffroadError, ValueError, OSError) as exc:
        print(f"error: DataError: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
