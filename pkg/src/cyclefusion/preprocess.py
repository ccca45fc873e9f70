"""Common time grid, normalization, input assembly and the random split."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .errors import (EmptySeries, InvalidTarget, ShapeMismatch, TooFewCycles,
                     UnknownSensor)
from .ingest import noise_channel

GRID_LENGTH = 6000
NORM_EPS = 1e-8
SPLIT_FRACTIONS = (0.70, 0.10, 0.20)

# Placeholder in a sensor list for a row of U[0, 1) noise.
NOISE = "NOISE"


def resample_linear(series, target_len=GRID_LENGTH):
    """Linear interpolation of ``series`` onto ``target_len`` equispaced points.

    Works row-wise on 2-D input.  Output ``k`` samples the input at position
    ``k * (L - 1) / (target_len - 1)``; endpoints and range are preserved.
    Lengths below the native one are allowed (point-sampling decimation).
    """
    x = np.asarray(series, dtype=np.float64)
    if x.shape[-1] == 0:
        raise EmptySeries("cannot resample an empty series")
    if target_len < 1:
        raise InvalidTarget(f"target length must be >= 1, got {target_len}")
    L = x.shape[-1]
    if L == target_len:
        return x.copy()
    if L == 1:
        return np.repeat(x, target_len, axis=-1)
    if target_len == 1:
        return x[..., :1].copy()
    pos = np.arange(target_len) * (L - 1) / (target_len - 1)
    lo = np.minimum(np.floor(pos).astype(np.int64), L - 1)
    hi = np.minimum(lo + 1, L - 1)
    w = pos - lo
    a, b = x[..., lo], x[..., hi]
    out = a + w * (b - a)
    return np.clip(out, np.minimum(a, b), np.maximum(a, b))


@dataclass(frozen=True)
class CycleMatrix:
    values: np.ndarray
    sensor_order: tuple

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def cols(self):
        return self.values.shape[1]


def assemble_matrix(record, sensors, length=GRID_LENGTH, noise=None):
    """Stack the resampled series of ``sensors`` into a ``len(sensors) x length`` matrix.

    ``noise`` supplies the row used wherever :data:`NOISE` appears.
    """
    if not sensors:
        raise UnknownSensor("empty sensor selection")
    rows = []
    for name in sensors:
        if name == NOISE:
            if noise is None:
                raise UnknownSensor("NOISE row requested without a noise vector")
            rows.append(resample_linear(noise, length))
        elif name in record.series:
            rows.append(resample_linear(record.series[name], length))
        else:
            raise UnknownSensor(f"sensor {name!r} not present in the record")
    return CycleMatrix(np.vstack(rows), tuple(sensors))


def assemble_batch(dataset, sensors, length=GRID_LENGTH, noise_seed=0):
    """``(n_cycles, len(sensors), length)`` early-fusion input for the whole data set.

    Noise rows are drawn at the grid length, i.e. after resampling.
    """
    if not sensors:
        raise UnknownSensor("empty sensor selection")
    n = dataset.n_cycles
    out = np.empty((n, len(sensors), length))
    noise_rows = 0
    for j, name in enumerate(sensors):
        if name == NOISE:
            out[:, j] = noise_channel(n, length, _rng.derive_seed(noise_seed, noise_rows))
            noise_rows += 1
        elif name in dataset.series:
            out[:, j] = resample_linear(dataset.series[name], length)
        else:
            raise UnknownSensor(f"sensor {name!r} not present in the data set")
    return out


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    eps: float = NORM_EPS

    @property
    def divisor(self):
        return np.maximum(self.std, self.eps)


def fit_norm(matrices, eps=NORM_EPS):
    """Per-row mean/std pooled over all training matrices and time steps."""
    if isinstance(matrices, (list, tuple)):
        shapes = {np.shape(getattr(m, "values", m)) for m in matrices}
        if len(shapes) > 1:
            raise ShapeMismatch(f"inconsistent training shapes {sorted(shapes)}")
        matrices = [getattr(m, "values", m) for m in matrices]
    x = np.asarray(matrices, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] == 0:
        raise ShapeMismatch(f"expected a non-empty (n, rows, cols) stack, got {x.shape}")
    mean = x.mean(axis=(0, 2))
    std = x.std(axis=(0, 2))
    lo, hi = x.min(axis=(0, 2)), x.max(axis=(0, 2))
    const = lo == hi
    mean[const] = lo[const]
    std[const] = 0.0
    return NormStats(mean, std, eps)


def apply_norm(matrix, stats):
    x = matrix.values if isinstance(matrix, CycleMatrix) else np.asarray(matrix, dtype=np.float64)
    if x.shape[-2] != len(stats.mean):
        raise ShapeMismatch(f"{x.shape[-2]} rows, stats for {len(stats.mean)}")
    out = (x - stats.mean[:, None]) / stats.divisor[:, None]
    return CycleMatrix(out, matrix.sensor_order) if isinstance(matrix, CycleMatrix) else out


def invert_norm(matrix, stats):
    x = matrix.values if isinstance(matrix, CycleMatrix) else np.asarray(matrix, dtype=np.float64)
    if x.shape[-2] != len(stats.mean):
        raise ShapeMismatch(f"{x.shape[-2]} rows, stats for {len(stats.mean)}")
    out = x * stats.divisor[:, None] + stats.mean[:, None]
    return CycleMatrix(out, matrix.sensor_order) if isinstance(matrix, CycleMatrix) else out


@dataclass(frozen=True)
class SplitAssignment:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int
    fractions: tuple = SPLIT_FRACTIONS

    @property
    def n(self):
        return len(self.train) + len(self.val) + len(self.test)


def split_sizes(n):
    n_train = n * 7 // 10
    n_val = n // 10
    return n_train, n_val, n - n_train - n_val


def split_random(n, seed):
    """Random 70/10/20 partition of ``range(n)`` (floor for train and val)."""
    if n < 10:
        raise TooFewCycles(f"need at least 10 cycles to split, got {n}")
    perm = _rng.stream(seed, "split").permutation(n)
    n_train, n_val, _ = split_sizes(n)
    return SplitAssignment(np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]),
                           np.sort(perm[n_train + n_val:]), seed)
