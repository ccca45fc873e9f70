"""Single-lane early-fusion CNN and the two-lane late-fusion variant.

Both share one convolutional stack design: ten valid convolutions with ReLU,
the first spanning the whole sensor axis of its input.  The single-lane net
sees all selected sensors stacked as rows of one matrix; the two-lane net
runs an independent stack per sensor and concatenates the flattened lane
outputs before the dense head.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import rng as _rng
from .errors import (DivergenceDetected, EmptyEvaluation, InputTooShort, ShapeMismatch,
                     UsageError)
from .ingest import AccumulatorClass
from .preprocess import apply_norm, assemble_batch, fit_norm

N_CONV_LAYERS = 10
N_CLASSES = len(AccumulatorClass)
MIN_KERNEL = 10
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class HyperParams:
    initial_lr: float
    n_filters_12: int
    kernel_12: int
    stride_1: int
    dropout_rate: float
    fc_neurons: int

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    in_channels: int
    kernel: tuple     # (kH, kW)
    stride: tuple     # (sH, sW)
    out_length: int


@dataclass(frozen=True)
class NetConfig:
    lane_shapes: tuple            # (rows, length) per lane
    convs: tuple                  # per lane: tuple of ConvSpec
    dropout: float
    fc_neurons: int
    n_classes: int = N_CLASSES

    @property
    def lanes(self):
        return len(self.lane_shapes)

    @property
    def flat_features(self):
        return sum(stack[-1].out_channels * stack[-1].out_length for stack in self.convs)


def kernel_widths(kernel_12, min_kernel=MIN_KERNEL, n_layers=N_CONV_LAYERS):
    """Nominal widths of conv layers 2..n: ``kernel_12`` then geometric decay to ``min_kernel``."""
    steps = n_layers - 2
    decayed = [kernel_12 * (min_kernel / kernel_12) ** (j / steps) for j in range(1, steps + 1)]
    return [kernel_12] + [int(round(w)) for w in decayed]


def conv_stack(rows, length, hp, min_kernel=MIN_KERNEL):
    """Layer specs of one lane for an input of ``rows x length``."""
    if length < hp.stride_1:
        raise InputTooShort(f"input length {length} shorter than first stride {hp.stride_1}")
    k1 = min(hp.kernel_12, length)
    cur = (length - k1) // hp.stride_1 + 1
    specs = [ConvSpec(hp.n_filters_12, 1, (rows, k1), (1, hp.stride_1), cur)]
    for width in kernel_widths(hp.kernel_12, min_kernel):
        k = max(min(width, cur), min(2, cur))
        cur = cur - k + 1
        specs.append(ConvSpec(hp.n_filters_12, hp.n_filters_12, (1, k), (1, 1), cur))
    return tuple(specs)


def build_tcocnn(hp, input_shape, min_kernel=MIN_KERNEL):
    """Early-fusion net for ``input_shape = (S, length)``."""
    rows, length = input_shape
    if rows < 1:
        raise ShapeMismatch("need at least one sensor row")
    return NetConfig(((rows, length),), (conv_stack(rows, length, hp, min_kernel),),
                     hp.dropout_rate, hp.fc_neurons)


def build_2lcnn(hp, lane_inputs, min_kernel=MIN_KERNEL):
    """Late-fusion net with one independent conv stack per lane shape."""
    lane_inputs = tuple(tuple(s) for s in lane_inputs)
    if len(lane_inputs) < 2:
        raise UsageError("a multi-lane net needs at least two lanes")
    return NetConfig(lane_inputs, tuple(conv_stack(r, L, hp, min_kernel) for r, L in lane_inputs),
                     hp.dropout_rate, hp.fc_neurons)


def _uniform(gen, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return gen.uniform(-bound, bound, size=shape)


class Network:
    """Parameters plus forward pass for a :class:`NetConfig`."""

    def __init__(self, config, seed=0):
        self.config = config
        gen = _rng.stream(seed, "init")
        self.lanes = []
        self.params = []
        for lane, stack in enumerate(config.convs):
            layers = []
            for i, spec in enumerate(stack):
                kH, kW = spec.kernel
                shape = (spec.out_channels, spec.in_channels, kH, kW)
                k = ad.Tensor(_uniform(gen, shape, spec.in_channels * kH * kW), True,
                              f"lane{lane}.conv{i + 1}.kernel")
                b = ad.Tensor(np.zeros(spec.out_channels), True, f"lane{lane}.conv{i + 1}.bias")
                layers.append((k, b, spec.stride))
                self.params += [k, b]
            self.lanes.append(layers)
        n_in = config.flat_features
        self.fc = (ad.Tensor(_uniform(gen, (config.fc_neurons, n_in), n_in), True, "fc.weight"),
                   ad.Tensor(np.zeros(config.fc_neurons), True, "fc.bias"))
        self.out = (ad.Tensor(_uniform(gen, (config.n_classes, config.fc_neurons), config.fc_neurons),
                              True, "out.weight"),
                    ad.Tensor(np.zeros(config.n_classes), True, "out.bias"))
        self.params += [*self.fc, *self.out]

    def lane_features(self, lane, x):
        h = x if isinstance(x, ad.Tensor) else ad.Tensor(np.asarray(x)[:, None, :, :])
        for k, b, stride in self.lanes[lane]:
            h = ad.relu(ad.conv2d(h, k, b, stride))
        return ad.flatten(h)

    def forward(self, inputs, training=False, rng=None):
        """Logits for ``inputs``, a list with one ``(N, rows, length)`` array per lane."""
        if len(inputs) != self.config.lanes:
            raise ShapeMismatch(f"{len(inputs)} inputs for {self.config.lanes} lanes")
        feats = [self.lane_features(i, x) for i, x in enumerate(inputs)]
        h = feats[0] if len(feats) == 1 else ad.concat(feats, axis=1)
        h = ad.dropout(h, self.config.dropout, rng, training)
        h = ad.relu(ad.dense(h, *self.fc))
        return ad.dense(h, *self.out)

    def state(self):
        return {p.name: p.data.copy() for p in self.params}

    def load_state(self, state):
        for p in self.params:
            if state[p.name].shape != p.data.shape:
                raise ShapeMismatch(f"{p.name}: {state[p.name].shape} vs {p.data.shape}")
            p.data = state[p.name].copy()

    def n_parameters(self):
        return sum(p.data.size for p in self.params)


def config_to_json(config):
    return json.dumps(asdict(config), sort_keys=True)


def config_from_json(text):
    raw = json.loads(text)
    convs = tuple(tuple(ConvSpec(s["out_channels"], s["in_channels"], tuple(s["kernel"]),
                                 tuple(s["stride"]), s["out_length"]) for s in stack)
                  for stack in raw["convs"])
    return NetConfig(tuple(tuple(s) for s in raw["lane_shapes"]), convs, raw["dropout"],
                     raw["fc_neurons"], raw["n_classes"])


def save_checkpoint(net, path):
    arrays = {f"param/{name}": value for name, value in net.state().items()}
    np.savez(path, format_version=CHECKPOINT_VERSION, config=config_to_json(net.config), **arrays)


def load_checkpoint(path):
    with np.load(path) as z:
        version = int(z["format_version"])
        if version != CHECKPOINT_VERSION:
            raise UsageError(f"unsupported checkpoint version {version}")
        net = Network(config_from_json(str(z["config"])))
        net.load_state({k.split("/", 1)[1]: z[k] for k in z.files if k.startswith("param/")})
    return net


# --- inputs ------------------------------------------------------------------

def make_inputs(dataset, lanes, length, train_indices, noise_seed=0):
    """Normalized per-lane input arrays.

    ``lanes`` is a list of sensor lists (one entry for early fusion).  Row
    statistics come from ``train_indices`` only.
    """
    out = []
    for i, sensors in enumerate(lanes):
        x = assemble_batch(dataset, list(sensors), length, _rng.derive_seed(noise_seed, i))
        out.append(apply_norm(x, fit_norm(x[train_indices])))
    return out


# --- training ----------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    decay_factor: float = 0.1
    patience: int = 10

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise UsageError("epochs must be >= 0 and batch_size >= 1")
        if self.patience < 1:
            raise UsageError("patience must be >= 1")

    @property
    def decay_epoch(self):
        return math.ceil(2 * self.epochs / 3)


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    train_error: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_error: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    best_val_error: float = math.nan
    test_error: float = None
    wall_time: float = 0.0
    seed: int = 0
    status: str = "ok"
    config: dict = field(default_factory=dict)

    def curves_csv(self):
        lines = ["epoch,train_loss,train_error,val_loss,val_error"]
        for e, row in enumerate(zip(self.train_loss, self.train_error, self.val_loss, self.val_error)):
            lines.append(",".join([str(e + 1)] + [repr(float(v)) for v in row]))
        return "\n".join(lines) + "\n"

    def summary(self):
        d = asdict(self)
        for key in ("train_loss", "train_error", "val_loss", "val_error"):
            d.pop(key)
        return d


def _batched_logits(net, inputs, indices, chunk=256):
    parts = [net.forward([x[indices[i:i + chunk]] for x in inputs]).data
             for i in range(0, len(indices), chunk)]
    return np.concatenate(parts) if parts else np.empty((0, net.config.n_classes))


def loss_and_error(net, inputs, targets, indices):
    indices = np.asarray(indices)
    if len(indices) == 0:
        raise EmptyEvaluation("no cycles to evaluate")
    z = _batched_logits(net, inputs, indices)
    y = targets[indices]
    logp = ad.log_softmax(z)
    return float(-logp[np.arange(len(y)), y].mean()), float(np.mean(np.argmax(z, axis=1) != y))


def evaluate(net, inputs, targets, indices):
    """Misclassification rate over ``indices``."""
    return loss_and_error(net, inputs, targets, indices)[1]


def predict(net, inputs):
    """Class codes by argmax of the logits (first maximum wins)."""
    z = _batched_logits(net, inputs, np.arange(len(inputs[0])))
    return np.argmax(z, axis=1)


def train(net, inputs, targets, split, tc, lr, log=None, run="run"):
    """Mini-batch Adam with step decay and early stopping on validation loss.

    The best-validation weights are restored at the end.  The test split is
    not touched here; see :func:`evaluate`.
    """
    start = time.perf_counter()
    targets = np.asarray(targets)
    report = TrainReport(seed=tc.seed, config={"lr": lr, **asdict(tc)})
    batch_rng = _rng.stream(tc.seed, "batch")
    drop_rng = _rng.stream(tc.seed, "dropout")
    state = ad.adam_init(net.params)
    if log is not None:
        log.record(run, "train", "fit")
        log.record(run, "val", "early-stopping")
    train_idx = np.asarray(split.train)
    best_state, since_best = None, 0
    for epoch in range(tc.epochs):
        step_lr = lr * (tc.decay_factor if epoch >= tc.decay_epoch else 1.0)
        order = batch_rng.permutation(train_idx)
        total, wrong = 0.0, 0
        for i in range(0, len(order), tc.batch_size):
            idx = order[i:i + tc.batch_size]
            logits = net.forward([x[idx] for x in inputs], training=True, rng=drop_rng)
            loss = ad.softmax_cross_entropy(logits, targets[idx])
            for p in net.params:
                p.zero_grad()
            loss.backward()
            ad.adam_step(net.params, [p.grad for p in net.params], state, step_lr)
            total += float(loss.data) * len(idx)
            wrong += int(np.sum(np.argmax(logits.data, axis=1) != targets[idx]))
        train_loss = total / max(len(order), 1)
        val_loss, val_err = loss_and_error(net, inputs, targets, split.val)
        report.train_loss.append(train_loss)
        report.train_error.append(wrong / max(len(order), 1))
        report.val_loss.append(val_loss)
        report.val_error.append(val_err)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            report.status = "diverged"
            report.wall_time = time.perf_counter() - start
            raise DivergenceDetected(f"non-finite loss at epoch {epoch + 1}", report)
        if val_loss < report.best_val_loss:
            report.best_val_loss, report.best_val_error = val_loss, val_err
            report.best_epoch = epoch + 1
            best_state, since_best = net.state(), 0
        else:
            since_best += 1
            if since_best >= tc.patience:
                break
    if best_state is not None:
        net.load_state(best_state)
    else:
        report.best_val_loss, report.best_val_error = loss_and_error(net, inputs, targets, split.val)
    report.wall_time = time.perf_counter() - start
    return report


@dataclass(frozen=True)
class NetBuilder:
    """Picklable ``hp -> NetConfig`` factory for one input layout."""
    kind: str                 # "tcocnn" or "2lcnn"
    shapes: tuple             # one (rows, length) per lane

    def __call__(self, hp):
        if self.kind == "tcocnn":
            return build_tcocnn(hp, self.shapes[0])
        if self.kind == "2lcnn":
            return build_2lcnn(hp, self.shapes)
        raise UsageError(f"unknown network kind {self.kind!r}")
