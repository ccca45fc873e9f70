"""Random-search tuning over the six network hyperparameters.

Trial ``t`` of repeat ``r`` under master seed ``m`` draws its hyperparameters,
weight init, batch order and dropout masks from seed ``hash(m, r, t)``, so a
search gives the same result whatever order (or process) its trials run in.
Selection is the argmin of validation loss; the test split is read once,
after selection, for the selected trial only.
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import rng as _rng
from .audit import AccessLog
from .errors import DivergenceDetected, NoViableTrial, UsageError
from .nets import HyperParams, Network, evaluate, train


@dataclass(frozen=True)
class HyperParamSpace:
    initial_lr: tuple = (1e-7, 1e-4)
    n_filters_12: tuple = (10, 100)
    kernel_12: tuple = (100, 300)
    stride_1: tuple = (100, 175)
    dropout_rate: tuple = (0.30, 0.50)
    fc_neurons: tuple = (500, 2500)

    def contains(self, hp):
        return all(lo <= getattr(hp, name) <= hi for name, (lo, hi) in asdict(self).items())


FULL_SPACE = HyperParamSpace()
# Desk scale works on a 600-sample grid: kernel and stride ranges shrink by 10.
DESK_SPACE = HyperParamSpace(kernel_12=(10, 30), stride_1=(10, 17))


def sample_hp(space, gen):
    """One draw: log-uniform learning rate, uniform integers (inclusive), uniform dropout."""
    lo, hi = space.initial_lr
    lr = lo if lo == hi else float(np.clip(10 ** gen.uniform(math.log10(lo), math.log10(hi)), lo, hi))

    def integer(bounds):
        return int(gen.integers(bounds[0], bounds[1] + 1))

    dlo, dhi = space.dropout_rate
    return HyperParams(
        initial_lr=lr,
        n_filters_12=integer(space.n_filters_12),
        kernel_12=integer(space.kernel_12),
        stride_1=integer(space.stride_1),
        dropout_rate=dlo if dlo == dhi else float(gen.uniform(dlo, dhi)),
        fc_neurons=integer(space.fc_neurons),
    )


def trial_seed(master_seed, repeat, trial):
    return _rng.derive_seed(master_seed, repeat, trial)


@dataclass
class TrialResult:
    index: int
    seed: int
    hp: HyperParams
    validation_loss: float = math.inf
    validation_error: float = math.nan
    test_error: float = None
    status: str = "ok"
    epochs: int = 0

    def to_json(self):
        d = asdict(self)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d["hp"] = HyperParams(**d["hp"])
        return cls(**d)


@dataclass
class SearchResult:
    repeat: int
    trials: list
    selected: int
    test_error: float


@dataclass
class TuningReport:
    searches: list = field(default_factory=list)

    @property
    def test_errors(self):
        return [s.test_error for s in self.searches]

    @property
    def mean(self):
        return float(np.mean(self.test_errors))

    @property
    def std(self):
        errs = self.test_errors
        return float(np.std(errs, ddof=1)) if len(errs) >= 2 else None

    def trials_csv(self):
        lines = ["repeat,trial,seed,initial_lr,n_filters_12,kernel_12,stride_1,dropout_rate,"
                 "fc_neurons,validation_loss,validation_error,test_error,status,selected"]
        for s in self.searches:
            for t in s.trials:
                hp = t.hp
                lines.append(",".join(str(v) for v in (
                    s.repeat, t.index, t.seed, repr(hp.initial_lr), hp.n_filters_12, hp.kernel_12,
                    hp.stride_1, repr(hp.dropout_rate), hp.fc_neurons, repr(t.validation_loss),
                    repr(t.validation_error), "" if t.test_error is None else repr(t.test_error),
                    t.status, int(t.index == s.selected))))
        return "\n".join(lines) + "\n"

    def summary(self):
        return {"repeats": len(self.searches), "test_errors": self.test_errors,
                "mean": self.mean, "std": self.std}


class TrialCache:
    """Trial outcomes and weights on disk, keyed by ``(tag, master_seed, repeat, trial)``.

    ``tag`` must identify everything else the trial depends on (data, sensor
    selection, model kind, scale).
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, tag, master_seed, repeat, trial):
        digest = hashlib.sha256(tag.encode()).hexdigest()[:16]
        return self.directory / f"{digest}_{master_seed}_{repeat}_{trial}.npz"

    def get(self, tag, master_seed, repeat, trial):
        path = self._path(tag, master_seed, repeat, trial)
        if not path.exists():
            return None
        with np.load(path) as z:
            result = TrialResult.from_json(str(z["result"]))
            state = {k.split("/", 1)[1]: z[k] for k in z.files if k.startswith("param/")}
        return result, state

    def put(self, tag, master_seed, repeat, trial, result, state):
        path = self._path(tag, master_seed, repeat, trial)
        arrays = {f"param/{k}": v for k, v in (state or {}).items()}
        tmp = path.with_suffix(".tmp.npz")
        np.savez(tmp, result=result.to_json(), **arrays)
        tmp.replace(path)


def run_trial(build_fn, space, inputs, targets, split, tc, master_seed, repeat, index):
    """Train one sampled configuration; returns ``(TrialResult, weights or None)``."""
    seed = trial_seed(master_seed, repeat, index)
    hp = sample_hp(space, _rng.stream(seed, "hpo"))
    net = Network(build_fn(hp), seed)
    try:
        report = train(net, inputs, targets, split, replace(tc, seed=seed), hp.initial_lr)
    except DivergenceDetected as exc:
        epochs = len(exc.report.train_loss) if exc.report else 0
        return TrialResult(index, seed, hp, status="diverged", epochs=epochs), None
    return (TrialResult(index, seed, hp, report.best_val_loss, report.best_val_error,
                        epochs=len(report.train_loss)), net.state())


def _run_trial_args(args):
    return run_trial(*args)


def random_search(space, n_trials, build_fn, inputs, targets, split, tc, master_seed,
                  repeat=0, log=None, run="search", jobs=1, cache=None, cache_tag=None):
    """Tune ``n_trials`` sampled networks on the training split and select by validation loss."""
    if n_trials < 1:
        raise UsageError("n_trials must be >= 1")
    log = AccessLog() if log is None else log
    log.record(run, "train", "fit")
    log.record(run, "val", "select")
    outcomes = [None] * n_trials
    todo = []
    for t in range(n_trials):
        hit = cache.get(cache_tag, master_seed, repeat, t) if cache is not None else None
        if hit is not None:
            outcomes[t] = hit
        else:
            todo.append(t)
    args = [(build_fn, space, inputs, targets, split, tc, master_seed, repeat, t) for t in todo]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            done = list(pool.map(_run_trial_args, args))
    else:
        done = [run_trial(*a) for a in args]
    for t, outcome in zip(todo, done):
        outcomes[t] = outcome
        if cache is not None:
            cache.put(cache_tag, master_seed, repeat, t, *outcome)
    trials = [o[0] for o in outcomes]
    viable = [t for t in trials if t.status == "ok"]
    if not viable:
        raise NoViableTrial(f"all {n_trials} trials diverged")
    best = min(viable, key=lambda t: (t.validation_loss, t.index))
    for t in trials:
        log.note(f"run={run} repeat={repeat} trial={t.index} seed={t.seed} hp={json.dumps(t.hp.as_dict(), sort_keys=True)} "
                 f"val_loss={t.validation_loss!r} val_error={t.validation_error!r} status={t.status}")
    log.finalize(run)
    net = Network(build_fn(best.hp))
    net.load_state(outcomes[best.index][1])
    best.test_error = evaluate(net, inputs, targets, log.test_indices(run, split))
    log.note(f"run={run} repeat={repeat} selected={best.index} test_error={best.test_error!r}")
    return SearchResult(repeat, trials, best.index, best.test_error)


def repeat_tuning(r, space, n_trials, build_fn, inputs, targets, split, tc, master_seed,
                  log=None, run="tuning", jobs=1, cache=None, cache_tag=None):
    """``r`` independent searches on a fixed split; fresh hyperparameter and init draws each."""
    if r < 1:
        raise UsageError("r must be >= 1")
    log = AccessLog() if log is None else log
    report = TuningReport()
    for rep in range(r):
        report.searches.append(random_search(
            space, n_trials, build_fn, inputs, targets, split, tc, master_seed, rep, log,
            f"{run}/r{rep}", jobs, cache, cache_tag))
    return report
