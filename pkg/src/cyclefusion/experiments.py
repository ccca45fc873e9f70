"""Preset experiment drivers and report emission.

Presets
-------
``baseline``  moment/LDA baseline on all sensors
``cnn_all``   early-fusion CNN on all sensors
``fig4a``     one CNN tuning per single sensor
``fig4b``     best sensor paired with every other sensor, plus best+best and best+noise
``fusion``    single-lane vs two-lane CNN on the (best, worst) pair

Every configuration is tuned with :func:`hpo.repeat_tuning` on one fixed
split derived from the master seed.
"""
from __future__ import annotations

import platform
from html import escape
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .audit import AccessLog
from .errors import IoError, UsageError
from .fesc import DEFAULT_K_GRID, fesc_evaluate, fesc_train
from .hpo import DESK_SPACE, FULL_SPACE, repeat_tuning
from .ingest import SyntheticSpec
from .nets import NetBuilder, TrainConfig, make_inputs
from .preprocess import NOISE, split_random

PRESETS = ("baseline", "cnn_all", "fig4a", "fig4b", "fusion")


@dataclass(frozen=True)
class Scale:
    name: str
    grid: int
    space: object
    trials: int
    repeats: int
    epochs: int
    batch_size: int = 32
    patience: int = 10

    def with_overrides(self, trials=None, repeats=None, epochs=None):
        return Scale(self.name, self.grid, self.space,
                     self.trials if trials is None else trials,
                     self.repeats if repeats is None else repeats,
                     self.epochs if epochs is None else epochs,
                     self.batch_size, self.patience)

    def train_config(self):
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           patience=min(self.patience, max(self.epochs, 1)))


DESK = Scale("desk", 600, DESK_SPACE, trials=10, repeats=3, epochs=30)
FULL = Scale("full", 6000, FULL_SPACE, trials=50, repeats=5, epochs=100)
SCALES = {"desk": DESK, "full": FULL}

# Stand-in for the real recordings: one informative channel plus pure-noise channels.
SYNTHETIC_DEFAULT = SyntheticSpec(cycles=200, sensors=3, informative_sensors=1, amplitude=1.0,
                                  noise_sigma=1.0, seed=1)


@dataclass
class ConfigResult:
    id: str
    kind: str
    lanes: tuple
    errors: list
    seed: int

    @property
    def repeats(self):
        return len(self.errors)

    @property
    def mean(self):
        return float(np.mean(self.errors))

    @property
    def median(self):
        return float(np.median(self.errors))

    @property
    def std(self):
        return float(np.std(self.errors, ddof=1)) if len(self.errors) >= 2 else None


@dataclass
class ExperimentResult:
    preset: str
    rows: list = field(default_factory=list)
    log: AccessLog = field(default_factory=AccessLog)
    runtime: float = 0.0
    env: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def row(self, config_id):
        for r in self.rows:
            if r.id == config_id:
                return r
        raise KeyError(config_id)


class Session:
    """Shared state for one set of presets: data, split, scale, seed and run log."""

    def __init__(self, dataset, scale=DESK, master_seed=0, jobs=1, cache=None):
        self.dataset = dataset
        self.scale = scale
        self.master_seed = int(master_seed)
        self.jobs = jobs
        self.cache = cache
        self.split = split_random(dataset.n_cycles, self.master_seed)
        self.log = AccessLog()
        self.log.note(f"split seed={self.master_seed} train={len(self.split.train)} "
                      f"val={len(self.split.val)} test={len(self.split.test)}")
        self._memo = {}

    def env(self):
        return {
            "package": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
            "scale": self.scale.name, "grid": self.scale.grid, "trials": self.scale.trials,
            "repeats": self.scale.repeats, "epochs": self.scale.epochs,
            "master_seed": self.master_seed, "dataset_sha256": self.dataset.digest(),
            "provenance": self.dataset.provenance.value, "cycles": self.dataset.n_cycles,
        }

    def tune(self, config_id, kind, lanes):
        """Tune one configuration and return its :class:`ConfigResult`.

        Results are memoized by model kind and lane layout, so the same
        configuration reached under two ids is trained once.
        """
        lanes = tuple(tuple(l) for l in lanes)
        key = (kind, lanes)
        if key in self._memo:
            return replace(self._memo[key], id=config_id)
        inputs = make_inputs(self.dataset, lanes, self.scale.grid, self.split.train, self.master_seed)
        builder = NetBuilder(kind, tuple((x.shape[1], x.shape[2]) for x in inputs))
        tag = f"{self.dataset.digest()}|{kind}|{lanes}|{self.scale}"
        report = repeat_tuning(self.scale.repeats, self.scale.space, self.scale.trials, builder,
                               inputs, self.dataset.targets, self.split, self.scale.train_config(),
                               self.master_seed, self.log, config_id, self.jobs, self.cache, tag)
        result = ConfigResult(config_id, kind, lanes, report.test_errors, self.master_seed)
        self.log.note(f"config={config_id} errors={result.errors!r} mean={result.mean!r} std={result.std!r}")
        self._memo[key] = result
        return result


def _cnn_id(sensors):
    return "TCOCNN:" + "+".join(sensors)


def run_baseline_all(dataset, seed, sensors=None, k_grid=DEFAULT_K_GRID):
    """FESC on all sensors with the standard split of ``seed``."""
    start = time.perf_counter()
    sensors = list(dataset.sensors if sensors is None else sensors)
    split = split_random(dataset.n_cycles, seed)
    log = AccessLog()
    model, val_err = fesc_train(dataset, sensors, split, k_grid, log=log)
    for k, err in model.k_grid:
        log.note(f"fesc k={k} val_error={err!r}")
    log.note(f"fesc selected k={model.k} val_error={val_err!r}")
    log.finalize("fesc")
    test_err = fesc_evaluate(model, dataset, log.test_indices("fesc", split))
    log.note(f"fesc test_error={test_err!r}")
    config_id = "FESC:all" if sensors == list(dataset.sensors) else "FESC:" + "+".join(sensors)
    row = ConfigResult(config_id, "FESC", (tuple(sensors),), [test_err], seed)
    env = {"package": __version__, "python": platform.python_version(), "numpy": np.__version__,
           "scipy": scipy.__version__, "master_seed": seed, "dataset_sha256": dataset.digest(),
           "provenance": dataset.provenance.value, "cycles": dataset.n_cycles}
    return ExperimentResult("baseline", [row], log, time.perf_counter() - start, env,
                            extras={"k_grid": model.k_grid, "k": model.k, "model": model,
                                    "validation_error": val_err})


def run_cnn_all(session):
    start = time.perf_counter()
    sensors = list(session.dataset.sensors)
    row = session.tune("TCOCNN:all", "tcocnn", [sensors])
    return ExperimentResult("cnn_all", [row], session.log, time.perf_counter() - start, session.env())


def run_single_sensor_sweep(session):
    """One tuning per sensor; records best and worst sensor by mean error."""
    start = time.perf_counter()
    rows = [session.tune(_cnn_id([s]), "tcocnn", [[s]]) for s in session.dataset.sensors]
    order = sorted(range(len(rows)), key=lambda i: (rows[i].mean, i))
    sensors = session.dataset.sensors
    extras = {"ranking": [sensors[i] for i in order], "best": sensors[order[0]],
              "worst": sensors[order[-1]]}
    session.log.note(f"sweep ranking={extras['ranking']}")
    return ExperimentResult("fig4a", rows, session.log, time.perf_counter() - start, session.env(), extras)


def run_pair_studies(session, best=None):
    """Best sensor with every other sensor, duplicated (B&B) and with a noise row (B&N)."""
    start = time.perf_counter()
    sweep = None
    if best is None:
        sweep = run_single_sensor_sweep(session)
        best = sweep.extras["best"]
    others = [s for s in session.dataset.sensors if s != best]
    rows = [session.tune(_cnn_id([best, o]), "tcocnn", [[best, o]]) for o in others]
    partner = max(range(len(rows)), key=lambda i: (rows[i].mean, -i))
    rows.append(session.tune("B&B:" + best, "tcocnn", [[best, best]]))
    rows.append(session.tune("B&N:" + best, "tcocnn", [[best, NOISE]]))
    extras = {"best": best, "worst": others[partner],
              "best_alone": session.tune(_cnn_id([best]), "tcocnn", [[best]])}
    if sweep is not None:
        extras["sweep"] = sweep
    session.log.note(f"pairs best={best} worst_partner={extras['worst']}")
    return ExperimentResult("fig4b", rows, session.log, time.perf_counter() - start, session.env(), extras)


def run_fusion_comparison(session, best=None, worst=None):
    """Single-lane vs two-lane CNN on the (best, worst) pair under the same tuning budget."""
    start = time.perf_counter()
    extras = {}
    if best is None or worst is None:
        pairs = run_pair_studies(session, best)
        best, worst = pairs.extras["best"], pairs.extras["worst"]
        extras["pairs"] = pairs
    single = session.tune(_cnn_id([best, worst]), "tcocnn", [[best, worst]])
    double = session.tune(f"2L-CNN:{best}|{worst}", "2lcnn", [[best], [worst]])
    extras.update(best=best, worst=worst)
    return ExperimentResult("fusion", [single, double], session.log,
                            time.perf_counter() - start, session.env(), extras)


def run_preset(preset, dataset, scale=DESK, master_seed=0, jobs=1, cache=None, session=None):
    if preset not in PRESETS:
        raise UsageError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    if preset == "baseline":
        return run_baseline_all(dataset, master_seed)
    session = session or Session(dataset, scale, master_seed, jobs, cache)
    runner = {"cnn_all": run_cnn_all, "fig4a": run_single_sensor_sweep,
              "fig4b": run_pair_studies, "fusion": run_fusion_comparison}[preset]
    return runner(session)


# --- reports -----------------------------------------------------------------

CSV_HEADER = "id,mean_error,std_error,repeats,seed"


def _fmt(v):
    return "" if v is None else repr(float(v))


def results_csv(rows):
    lines = [CSV_HEADER]
    lines += [f"{r.id},{_fmt(r.mean)},{_fmt(r.std)},{r.repeats},{r.seed}" for r in rows]
    return "\n".join(lines) + "\n"


_COLORS = {"FESC": "#4c72b0", "TCOCNN": "#dd8452", "2L-CNN": "#55a868"}
_KIND_LABEL = {"FESC": "FESC", "tcocnn": "TCOCNN", "2lcnn": "2L-CNN"}


def results_svg(rows, title="test error"):
    """Bar chart of mean test error with +-1 std error bars, one bar per configuration.

    Bars are grouped by model kind (colour).  Each bar carries its CSV mean
    verbatim in ``data-mean``.
    """
    plot_h, bar_w, gap, left, top = 300.0, 28.0, 10.0, 50.0, 30.0
    width = left + max(len(rows), 1) * (bar_w + gap) + gap
    height = top + plot_h + 120.0
    ymax = max([1.0] + [r.mean + (r.std or 0.0) for r in rows])

    def y(v):
        return top + plot_h * (1.0 - v / ymax)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1f}" height="{height:.1f}" '
           f'viewBox="0 0 {width:.1f} {height:.1f}">',
           f'<text x="{left:.1f}" y="18" font-family="sans-serif" font-size="13">{escape(title)}</text>',
           f'<line x1="{left:.1f}" y1="{top + plot_h:.1f}" x2="{width:.1f}" y2="{top + plot_h:.1f}" stroke="black"/>',
           f'<line x1="{left:.1f}" y1="{top:.1f}" x2="{left:.1f}" y2="{top + plot_h:.1f}" stroke="black"/>']
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        v = frac * ymax
        out.append(f'<text x="{left - 6:.1f}" y="{y(v) + 4:.1f}" font-family="sans-serif" font-size="10" '
                   f'text-anchor="end">{v:.2f}</text>')
    groups = {}
    for r in rows:
        groups.setdefault(_KIND_LABEL.get(r.kind, r.kind), []).append(r)
    x = left + gap
    for kind, members in groups.items():
        color = _COLORS.get(kind, "#8172b2")
        out.append(f'<g class="group" data-kind="{kind}">')
        for r in members:
            h = plot_h * r.mean / ymax
            out.append(f'<rect class="bar" data-id="{escape(r.id)}" data-mean="{_fmt(r.mean)}" '
                       f'data-std="{_fmt(r.std)}" x="{x:.3f}" y="{y(r.mean):.6f}" width="{bar_w:.1f}" '
                       f'height="{h:.6f}" fill="{color}"/>')
            if r.std is not None:
                cx = x + bar_w / 2
                lo, hi = max(r.mean - r.std, 0.0), r.mean + r.std
                out.append(f'<line class="errorbar" x1="{cx:.3f}" y1="{y(lo):.6f}" x2="{cx:.3f}" '
                           f'y2="{y(hi):.6f}" stroke="black"/>')
            label_y = top + plot_h + 8
            out.append(f'<text x="{x + bar_w / 2:.3f}" y="{label_y:.1f}" font-family="sans-serif" '
                       f'font-size="9" transform="rotate(60 {x + bar_w / 2:.3f} {label_y:.1f})">{escape(r.id)}</text>')
            x += bar_w + gap
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(result, out_dir):
    """Write ``results.csv``, ``results.svg``, ``runlog.txt`` and ``env.txt`` into ``out_dir``."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        rows = result.rows if isinstance(result, ExperimentResult) else list(result)
        (out_dir / "results.csv").write_text(results_csv(rows))
        (out_dir / "results.svg").write_text(results_svg(rows))
        if isinstance(result, ExperimentResult):
            (out_dir / "runlog.txt").write_text("\n".join(result.log.lines) + "\n")
            env = dict(result.env, preset=result.preset, runtime_seconds=round(result.runtime, 3))
            (out_dir / "env.txt").write_text("".join(f"{k}={v}\n" for k, v in sorted(env.items())))
    except OSError as exc:
        raise IoError(f"cannot write report to {out_dir}: {exc}") from exc
    return [out_dir / n for n in ("results.csv", "results.svg", "runlog.txt", "env.txt")
            if (out_dir / n).exists()]
