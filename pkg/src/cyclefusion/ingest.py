"""Loading the hydraulic test-rig data and generating synthetic stand-ins.

On disk the data set is one tab-separated text file per sensor
(``PS1.txt`` ... ``SE.txt``), one row per 60 s cycle and one column per sample
at the sensor's native rate, plus ``profile.txt`` holding five integer
condition columns per cycle: cooler %, valve %, pump leakage, accumulator
pressure (bar) and a stable flag.
"""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import rng as _rng
from .errors import (InconsistentCycleCount, InvalidSpec, LengthMismatch,
                     MissingSensorFile, ParseError, UnknownSetpoint, UnknownSensor)

CYCLE_SECONDS = 60


@dataclass(frozen=True)
class Sensor:
    name: str
    rate_hz: int
    kind: str

    @property
    def length(self):
        return self.rate_hz * CYCLE_SECONDS


# Checked against file shapes at load time.  Four temperature channels: the
# published file list has TS1-TS4, which is what makes the total 17.
SENSORS = (
    Sensor("PS1", 100, "pressure"), Sensor("PS2", 100, "pressure"),
    Sensor("PS3", 100, "pressure"), Sensor("PS4", 100, "pressure"),
    Sensor("PS5", 100, "pressure"), Sensor("PS6", 100, "pressure"),
    Sensor("EPS1", 100, "power"),
    Sensor("FS1", 10, "flow"), Sensor("FS2", 10, "flow"),
    Sensor("TS1", 1, "temperature"), Sensor("TS2", 1, "temperature"),
    Sensor("TS3", 1, "temperature"), Sensor("TS4", 1, "temperature"),
    Sensor("VS1", 1, "vibration"),
    Sensor("CE", 1, "virtual"), Sensor("CP", 1, "virtual"), Sensor("SE", 1, "virtual"),
)
SENSOR_BY_NAME = {s.name: s for s in SENSORS}
SENSOR_NAMES = tuple(s.name for s in SENSORS)

# Documented pre-charge setpoints, used only when a profile file is too small
# to contain all four levels.
DOCUMENTED_SETPOINTS = (130, 115, 100, 90)

PROFILE_COLUMNS = ("cooler_pct", "valve_pct", "pump_leak", "accumulator_bar", "stable_flag")


def sensor(name):
    try:
        return SENSOR_BY_NAME[name]
    except KeyError:
        raise UnknownSensor(f"unknown sensor {name!r}") from None


class AccumulatorClass(enum.IntEnum):
    OPTIMAL = 0
    LIGHTLY_REDUCED = 1
    SEVERELY_REDUCED = 2
    CLOSE_TO_FAILURE = 3


class Provenance(enum.Enum):
    REAL = "real"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class ConditionProfile:
    cooler_pct: int
    valve_pct: int
    pump_leak: int
    accumulator_bar: int
    stable_flag: int


@dataclass(frozen=True)
class CycleRecord:
    index: int
    series: dict
    profile: ConditionProfile
    target: AccumulatorClass


def accumulator_setpoints(values):
    """Distinct accumulator setpoints in decreasing order (highest = optimal)."""
    distinct = sorted({int(v) for v in np.asarray(values).ravel()}, reverse=True)
    if len(distinct) == len(AccumulatorClass):
        return tuple(distinct)
    if set(distinct) <= set(DOCUMENTED_SETPOINTS):
        return DOCUMENTED_SETPOINTS
    raise UnknownSetpoint(distinct)


def label_class(accumulator_bar, setpoints=DOCUMENTED_SETPOINTS):
    """Map a pre-charge pressure onto its class by rank among ``setpoints``."""
    ranked = sorted(setpoints, reverse=True)
    for code, value in enumerate(ranked):
        if accumulator_bar == value:
            return AccumulatorClass(code)
    raise UnknownSetpoint(accumulator_bar)


@dataclass(frozen=True, eq=False)
class DataSet:
    """Immutable column store of cycles.

    ``series[name]`` is an ``(n_cycles, native_length)`` array and
    ``profiles`` an ``(n_cycles, 5)`` integer array.
    """
    series: dict
    profiles: np.ndarray
    targets: np.ndarray
    provenance: Provenance = Provenance.REAL
    setpoints: tuple = DOCUMENTED_SETPOINTS

    def __post_init__(self):
        n = len(self.targets)
        for name, arr in self.series.items():
            s = sensor(name)
            if arr.ndim != 2 or arr.shape[1] != s.length:
                raise LengthMismatch(name, s.length, arr.shape[-1])
            if arr.shape[0] != n:
                raise InconsistentCycleCount(f"{name}: {arr.shape[0]} cycles, expected {n}")
            arr.flags.writeable = False
        if self.profiles.shape != (n, len(PROFILE_COLUMNS)):
            raise InconsistentCycleCount(f"profile has shape {self.profiles.shape}, expected ({n}, 5)")
        self.profiles.flags.writeable = False
        self.targets.flags.writeable = False

    @property
    def n_cycles(self):
        return len(self.targets)

    @property
    def sensors(self):
        return tuple(self.series)

    @property
    def manifest(self):
        return [(name, sensor(name).rate_hz, sensor(name).length) for name in self.series]

    def record(self, i):
        return CycleRecord(
            index=i,
            series={name: arr[i] for name, arr in self.series.items()},
            profile=ConditionProfile(*(int(v) for v in self.profiles[i])),
            target=AccumulatorClass(int(self.targets[i])),
        )

    @property
    def cycles(self):
        return [self.record(i) for i in range(self.n_cycles)]

    def class_counts(self):
        return np.bincount(self.targets, minlength=len(AccumulatorClass))

    def digest(self):
        """SHA-256 over sensor values, profiles and targets."""
        h = hashlib.sha256()
        for name in self.series:
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.series[name], dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.profiles, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.targets, dtype="<i8").tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, DataSet):
            return NotImplemented
        return (self.sensors == other.sensors and self.provenance == other.provenance
                and all(np.array_equal(self.series[k], other.series[k]) for k in self.series)
                and np.array_equal(self.profiles, other.profiles)
                and np.array_equal(self.targets, other.targets))


def _locate_bad_token(path):
    with open(path) as fh:
        for row, line in enumerate(fh):
            tokens = line.rstrip("\r\n").split("\t")
            for col, tok in enumerate(tokens):
                try:
                    float(tok)
                except ValueError:
                    raise ParseError(path.name, row, col, tok) from None
    raise ParseError(path.name, -1, -1)


def read_table(path):
    """Read one tab-separated file into a 2-D array, with precise diagnostics."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, sep="\t", header=None, dtype=np.float64,
                            float_precision="round_trip")
    except pd.errors.ParserError as exc:
        # ragged rows: more fields than the first row
        raise LengthMismatch(path.stem, "uniform", str(exc).strip()) from None
    except ValueError:
        _locate_bad_token(path)
    values = frame.to_numpy()
    if np.isnan(values).any():
        # short rows are padded with NaN by the parser
        row = int(np.argwhere(np.isnan(values).any(axis=1))[0, 0])
        got = int((~np.isnan(values[row])).sum())
        raise LengthMismatch(path.stem, values.shape[1], got)
    if not np.isfinite(values).all():
        row, col = (int(v) for v in np.argwhere(~np.isfinite(values))[0])
        raise ParseError(path.name, row, col, values[row, col])
    return values


def load_dataset(directory, sensors=SENSOR_NAMES):
    """Load ``<SENSOR>.txt`` files and ``profile.txt`` from ``directory``."""
    directory = Path(directory)
    series = {}
    n = None
    for name in sensors:
        s = sensor(name)
        path = directory / f"{name}.txt"
        if not path.exists():
            raise MissingSensorFile(name)
        values = read_table(path)
        if values.shape[1] != s.length:
            raise LengthMismatch(name, s.length, values.shape[1])
        if n is not None and values.shape[0] != n:
            raise InconsistentCycleCount(f"{name}.txt has {values.shape[0]} rows, expected {n}")
        n = values.shape[0]
        series[name] = values
    path = directory / "profile.txt"
    if not path.exists():
        raise MissingSensorFile("profile")
    profiles = read_table(path)
    if profiles.shape[1] != len(PROFILE_COLUMNS):
        raise LengthMismatch("profile", len(PROFILE_COLUMNS), profiles.shape[1])
    if n is not None and profiles.shape[0] != n:
        raise InconsistentCycleCount(f"profile.txt has {profiles.shape[0]} rows, expected {n}")
    profiles = profiles.astype(np.int64)
    setpoints = accumulator_setpoints(profiles[:, 3])
    targets = np.array([label_class(v, setpoints) for v in profiles[:, 3]], dtype=np.int64)
    return DataSet(series, profiles, targets, Provenance.REAL, setpoints)


def save_dataset(dataset, directory):
    """Write ``dataset`` in the on-disk layout read by :func:`load_dataset`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, arr in dataset.series.items():
        np.savetxt(directory / f"{name}.txt", arr, fmt="%.17g", delimiter="\t")
    np.savetxt(directory / "profile.txt", dataset.profiles, fmt="%d", delimiter="\t")


# --- synthetic data ----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic generator.

    The first ``informative_sensors`` of the ``sensors`` channels carry the
    class signal; the rest are Gaussian noise.
    """
    cycles: int = 400
    sensors: int = 17
    informative_sensors: int = 1
    amplitude: float = 1.0
    noise_sigma: float = 1.0
    seed: int = 0
    classes: int = 4

    def __post_init__(self):
        if self.cycles <= 0:
            raise InvalidSpec("cycles must be positive")
        if not 2 <= self.classes <= len(AccumulatorClass):
            raise InvalidSpec("classes must be between 2 and 4")
        if not 1 <= self.sensors <= len(SENSORS):
            raise InvalidSpec(f"sensors must be between 1 and {len(SENSORS)}")
        if not 0 <= self.informative_sensors <= self.sensors:
            raise InvalidSpec("informative_sensors must not exceed sensors")
        if self.noise_sigma < 0 or self.amplitude < 0:
            raise InvalidSpec("amplitude and noise_sigma must be non-negative")

    @property
    def sensor_names(self):
        return SENSOR_NAMES[: self.sensors]

    @classmethod
    def from_file(cls, path):
        """Parse a flat ``key=value`` file (``#`` starts a comment)."""
        kwargs = {}
        types = {"cycles": int, "sensors": int, "informative_sensors": int,
                 "amplitude": float, "noise_sigma": float, "seed": int, "classes": int}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (part.strip() for part in line.partition("="))
            if not sep or key not in types:
                raise InvalidSpec(f"{path}:{lineno}: bad entry {line!r}")
            try:
                kwargs[key] = types[key](value)
            except ValueError:
                raise InvalidSpec(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
        return cls(**kwargs)

    def to_text(self):
        return "".join(f"{k}={getattr(self, k)}\n" for k in
                       ("cycles", "sensors", "informative_sensors", "amplitude",
                        "noise_sigma", "seed", "classes"))


def cyclic_template(length):
    t = np.arange(length) / length
    return np.sin(2 * np.pi * t) + 0.5 * np.sin(4 * np.pi * t + 0.3)


def generate_synthetic(spec, seed=None):
    """Deterministic synthetic data set.

    Informative channels follow ``amplitude * c + (1 + 0.5 * amplitude * c) *
    template + noise`` for class code ``c``; the template has zero mean over a
    cycle, so adjacent class means differ by exactly ``amplitude`` in
    expectation.  Uninformative channels are ``N(0, noise_sigma^2)``.
    """
    seed = spec.seed if seed is None else seed
    gen = _rng.stream(seed, "synth")
    n = spec.cycles
    codes = np.resize(np.arange(spec.classes), n)
    targets = gen.permutation(codes).astype(np.int64)
    series = {}
    for i, name in enumerate(spec.sensor_names):
        length = sensor(name).length
        noise = gen.normal(0.0, spec.noise_sigma, size=(n, length)) if spec.noise_sigma else np.zeros((n, length))
        if i < spec.informative_sensors:
            c = targets[:, None].astype(float)
            tmpl = cyclic_template(length)[None, :]
            series[name] = spec.amplitude * c + (1 + 0.5 * spec.amplitude * c) * tmpl + noise
        else:
            series[name] = noise
    setpoints = DOCUMENTED_SETPOINTS
    profiles = np.column_stack([
        gen.choice([3, 20, 100], size=n),
        gen.choice([73, 80, 90, 100], size=n),
        gen.choice([0, 1, 2], size=n),
        np.array(setpoints)[targets],
        gen.choice([0, 1], size=n),
    ]).astype(np.int64)
    return DataSet(series, profiles, targets, Provenance.SYNTHETIC, setpoints)


def noise_channel(n_cycles, length, seed):
    """I.i.d. U[0, 1) samples, shape ``(n_cycles, length)``."""
    if n_cycles <= 0 or length <= 0:
        raise InvalidSpec("noise channel needs positive sizes")
    return _rng.stream(seed, "noise").random((n_cycles, length))
