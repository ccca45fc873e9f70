"""Command-line entry point.

Global flags may be given before or after the subcommand.  Run parameters
can also come from a flat ``key=value`` file passed with ``--config``; flags
win over the file, and the file wins over built-in defaults.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from .audit import AccessLog
from .errors import (CycleFusionError, DataError, IoError, NumericError, UsageError)
from .experiments import (PRESETS, SCALES, SYNTHETIC_DEFAULT, ConfigResult, ExperimentResult,
                          Session, emit_report, run_baseline_all, run_cnn_all,
                          run_fusion_comparison, run_pair_studies, run_single_sensor_sweep)
from .fesc import DEFAULT_K_GRID
from .hpo import TrialCache, repeat_tuning
from .ingest import SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .nets import (HyperParams, NetBuilder, Network, build_2lcnn, build_tcocnn,
                   evaluate, make_inputs, save_checkpoint, train)
from .preprocess import split_random

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# name -> (type, default); every run parameter that --config may set
PARAMS = {
    "data": (str, None),
    "synthetic": (str, None),
    "seed": (int, None),
    "scale": (str, "desk"),
    "out": (str, "out"),
    "jobs": (int, os.cpu_count() or 1),
    "cache": (str, None),
    "trials": (int, None),
    "repeats": (int, None),
    "epochs": (int, None),
}

SYNTH_SPEC_FILE = "synthetic.cfg"

EXPERIMENTS = ("fig4a", "fig4b", "fusion", "baseline", "cnn_all", "all")


def read_config(path):
    """Flat ``key=value`` file; ``#`` starts a comment."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        key = key.replace("-", "_")
        if not sep or key not in PARAMS:
            raise UsageError(f"{path}:{lineno}: unknown or malformed entry {line!r}")
        try:
            values[key] = PARAMS[key][0](value)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return values


def _common():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    src = g.add_mutually_exclusive_group()
    src.add_argument("--data", metavar="DIR", default=argparse.SUPPRESS,
                     help="directory with the 17 sensor files and profile.txt")
    src.add_argument("--synthetic", metavar="SPEC", default=argparse.SUPPRESS,
                     help="synthetic spec file (key=value), or 'default' for the documented configuration")
    g.add_argument("--seed", type=int, metavar="N", default=argparse.SUPPRESS,
                   help="master seed (required for commands that train)")
    g.add_argument("--scale", choices=sorted(SCALES), default=argparse.SUPPRESS,
                   help="desk (600-sample grid, small budget) or full (default: desk)")
    g.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS, help="output root (default: out)")
    g.add_argument("--jobs", type=int, metavar="N", default=argparse.SUPPRESS,
                   help="worker processes for tuning trials (default: number of processors)")
    g.add_argument("--cache", metavar="DIR", default=argparse.SUPPRESS,
                   help="trial cache directory (default: <out>/cache)")
    g.add_argument("--config", metavar="FILE", default=argparse.SUPPRESS,
                   help="key=value file with any of the options above or the budget overrides")
    g.add_argument("--trials", type=int, metavar="N", default=argparse.SUPPRESS,
                   help="override trials per tuning")
    g.add_argument("--repeats", type=int, metavar="N", default=argparse.SUPPRESS,
                   help="override tuning repeats")
    g.add_argument("--epochs", type=int, metavar="N", default=argparse.SUPPRESS,
                   help="override epochs per training run")
    return p


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="cyclefusion", parents=[common],
                                     description="Sensor fusion experiments on cyclic sensor data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    sub.add_parser("inspect", parents=[common], help="print the sensor manifest and class counts")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic data set to --out")

    p = sub.add_parser("baseline", parents=[common], help="moment features + LDA baseline")
    p.add_argument("--sensors", default="all", help="comma-separated sensor names or 'all'")
    p.add_argument("--k-grid", default=",".join(str(k) for k in DEFAULT_K_GRID),
                   help="feature counts to try, comma-separated; 'all' means every feature")

    for name, helptext in (("train", "train one network with fixed hyperparameters"),
                           ("hpo", "random-search tuning of one configuration")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--kind", choices=("tcocnn", "2lcnn"), default="tcocnn",
                       help="single-lane early fusion or one lane per sensor")
        p.add_argument("--sensors", default="all",
                       help="comma-separated sensor names or 'all'; NOISE adds a uniform-noise row")
        if name == "train":
            p.add_argument("--lr", type=float, help="learning rate (default: log-midpoint of the scale range)")
            p.add_argument("--filters", type=int, help="filters in layers 1-2")
            p.add_argument("--kernel", type=int, help="kernel width of layers 1-2")
            p.add_argument("--stride", type=int, help="stride of layer 1")
            p.add_argument("--dropout", type=float, help="dropout rate before the dense layer")
            p.add_argument("--fc", type=int, help="neurons in the dense layer")

    p = sub.add_parser("experiment", parents=[common], help="run a preset and write its report")
    p.add_argument("preset", help="one of " + ", ".join(EXPERIMENTS))
    p.add_argument("--best", help="skip the sweep and use this sensor as best (fig4b, fusion)")
    p.add_argument("--worst", help="worst partner for the fusion comparison")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the networks")
    p.add_argument("--coords", type=int, default=20, help="probed entries per parameter tensor")
    return parser


def resolve(args):
    """Merge flags over ``--config`` over defaults into ``args``."""
    given = vars(args)
    from_file = read_config(given["config"]) if "config" in given else {}
    if "data" in given or "synthetic" in given:
        # a source flag replaces whatever source the file names
        from_file.pop("data", None)
        from_file.pop("synthetic", None)
    for key, (_, default) in PARAMS.items():
        if key not in given:
            setattr(args, key, from_file.get(key, default))
    if args.data is not None and args.synthetic is not None:
        raise UsageError("give exactly one of --data and --synthetic")
    if args.scale not in SCALES:
        raise UsageError(f"unknown scale {args.scale!r}")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    return args


def load_source(args):
    if args.data is not None:
        spec = Path(args.data) / SYNTH_SPEC_FILE
        if spec.exists():
            # written by `synth`: only the spec's sensors are on disk
            return load_dataset(args.data, SyntheticSpec.from_file(spec).sensor_names)
        return load_dataset(args.data)
    if args.synthetic is not None:
        if args.synthetic == "default":
            return generate_synthetic(SYNTHETIC_DEFAULT)
        return generate_synthetic(SyntheticSpec.from_file(args.synthetic))
    raise UsageError("no data source: give --data DIR or --synthetic SPEC")


def synthetic_spec(args):
    if args.synthetic in (None, "default"):
        return SYNTHETIC_DEFAULT
    return SyntheticSpec.from_file(args.synthetic)


def require_seed(args):
    if args.seed is None:
        raise UsageError(f"{args.command} trains or splits data and needs --seed")
    return args.seed


def parse_sensors(text, dataset):
    if text.strip().lower() == "all":
        return list(dataset.sensors)
    names = [s.strip() for s in text.split(",") if s.strip()]
    if not names:
        raise UsageError("empty sensor list")
    return names


def scale_of(args):
    return SCALES[args.scale].with_overrides(args.trials, args.repeats, args.epochs)


def out_dir(args, name):
    return Path(args.out) / name


def cache_of(args):
    try:
        return TrialCache(args.cache or Path(args.out) / "cache")
    except OSError as exc:
        raise IoError(f"cannot create trial cache: {exc}") from exc


# --- commands ----------------------------------------------------------------

def cmd_inspect(args):
    ds = load_source(args)
    print(f"source: {ds.provenance.value}")
    print(f"cycles: {ds.n_cycles}")
    print(f"sensors: {len(ds.sensors)}")
    for name, rate, length in ds.manifest:
        print(f"  {name:<5} {rate:>4} Hz {length:>5} samples")
    print("classes (accumulator setpoint bar -> cycles):")
    for code, count in enumerate(ds.class_counts()):
        print(f"  {code} ({ds.setpoints[code]} bar): {count}")
    print(f"sha256: {ds.digest()}")
    return EXIT_OK


def cmd_synth(args):
    spec = synthetic_spec(args)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    ds = generate_synthetic(spec)
    target = Path(args.out)
    try:
        save_dataset(ds, target)
        (target / SYNTH_SPEC_FILE).write_text(spec.to_text())
    except OSError as exc:
        raise IoError(f"cannot write data set to {target}: {exc}") from exc
    print(f"wrote {ds.n_cycles} cycles x {len(ds.sensors)} sensors to {target}")
    return EXIT_OK


def parse_k_grid(text):
    grid = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok == "all":
            grid.append("all")
        else:
            try:
                grid.append(int(tok))
            except ValueError:
                raise UsageError(f"bad k-grid entry {tok!r}") from None
    return tuple(grid)


def cmd_baseline(args):
    seed = require_seed(args)
    ds = load_source(args)
    result = run_baseline_all(ds, seed, parse_sensors(args.sensors, ds), parse_k_grid(args.k_grid))
    emit_report(result, out_dir(args, "baseline"))
    row = result.rows[0]
    print(f"{row.id} k={result.extras['k']} validation_error={result.extras['validation_error']:.4f} "
          f"test_error={row.errors[0]:.4f}")
    return EXIT_OK


def _lanes(args, ds):
    sensors = parse_sensors(args.sensors, ds)
    if args.kind == "2lcnn":
        return [[s] for s in sensors]
    return [sensors]


def default_hp(space):
    lo, hi = space.initial_lr
    mid = lambda b: int(round((b[0] + b[1]) / 2))
    return HyperParams(float(10 ** ((np.log10(lo) + np.log10(hi)) / 2)), mid(space.n_filters_12),
                       mid(space.kernel_12), mid(space.stride_1),
                       (space.dropout_rate[0] + space.dropout_rate[1]) / 2, mid(space.fc_neurons))


def cmd_train(args):
    seed = require_seed(args)
    ds = load_source(args)
    scale = scale_of(args)
    base = default_hp(scale.space)
    hp = HyperParams(args.lr if args.lr is not None else base.initial_lr,
                     args.filters or base.n_filters_12, args.kernel or base.kernel_12,
                     args.stride or base.stride_1,
                     args.dropout if args.dropout is not None else base.dropout_rate,
                     args.fc or base.fc_neurons)
    lanes = _lanes(args, ds)
    split = split_random(ds.n_cycles, seed)
    inputs = make_inputs(ds, lanes, scale.grid, split.train, seed)
    shapes = [(x.shape[1], x.shape[2]) for x in inputs]
    config = build_tcocnn(hp, shapes[0]) if args.kind == "tcocnn" else build_2lcnn(hp, shapes)
    net = Network(config, seed)
    log = AccessLog()
    run = "train"
    report = train(net, inputs, ds.targets, split, replace(scale.train_config(), seed=seed),
                   hp.initial_lr, log, run)
    log.finalize(run)
    report.test_error = evaluate(net, inputs, ds.targets, log.test_indices(run, split))
    target = out_dir(args, "train")
    try:
        target.mkdir(parents=True, exist_ok=True)
        save_checkpoint(net, target / "checkpoint.npz")
        (target / "curves.csv").write_text(report.curves_csv())
        summary = dict(report.summary(), hp=hp.as_dict(), kind=args.kind, lanes=lanes)
        (target / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        (target / "runlog.txt").write_text("\n".join(log.lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write to {target}: {exc}") from exc
    print(f"best epoch {report.best_epoch} val_loss={report.best_val_loss:.4f} "
          f"val_error={report.best_val_error:.4f} test_error={report.test_error:.4f}")
    return EXIT_OK


def cmd_hpo(args):
    seed = require_seed(args)
    ds = load_source(args)
    scale = scale_of(args)
    session = Session(ds, scale, seed, args.jobs, cache_of(args))
    lanes = _lanes(args, ds)
    label = "+".join(s for lane in lanes for s in lane)
    config_id = ("TCOCNN:" if args.kind == "tcocnn" else "2L-CNN:") + label
    inputs = make_inputs(ds, lanes, scale.grid, session.split.train, seed)
    builder = NetBuilder(args.kind, tuple((x.shape[1], x.shape[2]) for x in inputs))
    report = repeat_tuning(scale.repeats, scale.space, scale.trials, builder, inputs, ds.targets,
                           session.split, scale.train_config(), seed, session.log, config_id,
                           args.jobs, session.cache, f"{ds.digest()}|{args.kind}|{lanes}|{scale}")
    row = ConfigResult(config_id, args.kind, tuple(tuple(l) for l in lanes), report.test_errors, seed)
    result = ExperimentResult("hpo", [row], session.log, 0.0, session.env())
    target = out_dir(args, "hpo")
    emit_report(result, target)
    try:
        (target / "trials.csv").write_text(report.trials_csv())
    except OSError as exc:
        raise IoError(f"cannot write to {target}: {exc}") from exc
    std = "n/a" if row.std is None else f"{row.std:.4f}"
    print(f"{config_id} test errors {row.errors} mean={row.mean:.4f} std={std}")
    return EXIT_OK


def cmd_experiment(args):
    if args.preset not in EXPERIMENTS:
        raise UsageError(f"unknown preset {args.preset!r}; choose from {', '.join(EXPERIMENTS)}")
    seed = require_seed(args)
    ds = load_source(args)
    for name in (args.best, args.worst):
        if name is not None and name not in ds.sensors:
            raise UsageError(f"unknown sensor {name!r}")
    wanted = PRESETS if args.preset == "all" else (args.preset,)
    session = Session(ds, scale_of(args), seed, args.jobs, cache_of(args))
    best, worst = args.best, args.worst
    for preset in wanted:
        if preset == "baseline":
            result = run_baseline_all(ds, seed)
        elif preset == "cnn_all":
            result = run_cnn_all(session)
        elif preset == "fig4a":
            result = run_single_sensor_sweep(session)
            best = best or result.extras["best"]
        elif preset == "fig4b":
            result = run_pair_studies(session, best)
            best = result.extras["best"]
            worst = worst or result.extras["worst"]
        else:
            result = run_fusion_comparison(session, best, worst)
        emit_report(result, out_dir(args, preset))
        print(f"[{preset}]")
        for row in result.rows:
            std = "" if row.std is None else f" std={row.std:.4f}"
            print(f"  {row.id:<28} mean={row.mean:.4f}{std} n={row.repeats}")
    return EXIT_OK


def cmd_gradcheck(args):
    """Finite-difference check of both architectures at desk-scale input shapes."""
    seed = 0 if args.seed is None else args.seed
    gen = np.random.default_rng(seed)
    hp = HyperParams(1e-4, 2, 10, 10, 0.3, 6)
    grid = SCALES["desk"].grid
    cases = {"tcocnn": build_tcocnn(hp, (3, grid)),
             "2lcnn": build_2lcnn(hp, [(1, grid), (1, grid)])}
    worst = 0.0
    for name, config in cases.items():
        net = Network(config, seed)
        for p in net.params:
            if p.name.endswith("bias"):
                p.data = gen.uniform(0.05, 0.2, p.data.shape)   # stay off the ReLU kink
        x = [gen.standard_normal((2, r, L)) for r, L in config.lane_shapes]
        y = gen.integers(0, config.n_classes, 2)
        report = ad.grad_check(lambda: ad.softmax_cross_entropy(net.forward(x), y), net.params,
                               max_coords=args.coords, seed=seed)
        print(f"[{name}] {report}")
        worst = max(worst, report.max_rel_error)
    if worst >= 1e-4:
        raise NumericError(f"gradient check failed: max relative error {worst:.3e}")
    return EXIT_OK


COMMANDS = {"inspect": cmd_inspect, "synth": cmd_synth, "baseline": cmd_baseline,
            "train": cmd_train, "hpo": cmd_hpo, "experiment": cmd_experiment,
            "gradcheck": cmd_gradcheck}


def exit_code(exc):
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, (DataError, IoError)):
        return EXIT_DATA
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    return 1


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        resolve(args)
        return COMMANDS[args.command](args)
    except CycleFusionError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
