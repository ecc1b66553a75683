"""Throughput traces: synthetic generation, file I/O and dataset splits."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

SYNTHETIC_KINDS = ("gamma", "logistic", "exponential")
KINDS = SYNTHETIC_KINDS + ("file",)


class TraceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Trace:
    """Piecewise-constant throughput series.

    Throughput ``rates[i]`` (Mbps) holds from ``times[i]`` until ``times[i+1]``.
    The last sample holds for the previous spacing (1 s for a single-sample
    trace), so a trace covers ``[0, period)`` relative to its first timestamp
    and replays from the start when a session outlives it.
    """

    times: np.ndarray
    rates: np.ndarray
    id: str = ""

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        rates = np.array(self.rates, dtype=float)
        if times.ndim != 1 or times.shape != rates.shape:
            raise TraceError("times and rates must be 1-D arrays of equal length")
        if times.size == 0:
            raise TraceError("trace needs at least one point")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(rates))):
            raise TraceError("trace contains non-finite values")
        if np.any(np.diff(times) <= 0):
            raise TraceError("timestamps must be strictly increasing")
        if np.any(rates < 0):
            raise TraceError("throughput must be non-negative")
        times.setflags(write=False)
        rates.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "rates", rates)

    def __len__(self):
        return self.times.size

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        # the id is a label, not part of the data
        return np.array_equal(self.times, other.times) and np.array_equal(self.rates, other.rates)

    __hash__ = None

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.rates.tolist()))

    @property
    def period(self) -> float:
        """Length of one replay cycle in seconds."""
        if self.times.size == 1:
            return 1.0
        return float(self.times[-1] - self.times[0] + (self.times[-1] - self.times[-2]))

    def relative_times(self) -> np.ndarray:
        return self.times - self.times[0]


@dataclass(frozen=True)
class DistributionSpec:
    """i.i.d. throughput law, or a directory of trace files for ``kind='file'``."""

    kind: str
    shape: float | None = None
    scale: float = 1.0
    loc: float = 0.0
    path: str | None = None
    floor: float = 0.01

    def __post_init__(self):
        if self.kind not in KINDS:
            raise TraceError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "file":
            if not self.path:
                raise TraceError("file-backed distribution needs a path")
            return
        if not self.scale > 0:
            raise TraceError("scale must be positive")
        if self.kind == "gamma" and not (self.shape is not None and self.shape > 0):
            raise TraceError("gamma shape must be positive")
        if not self.floor > 0:
            raise TraceError("throughput floor must be positive")

    @property
    def synthetic(self) -> bool:
        return self.kind != "file"

    def mean(self) -> float:
        if self.kind == "gamma":
            return self.shape * self.scale
        if self.kind == "logistic":
            return self.loc
        if self.kind == "exponential":
            return self.scale
        raise TraceError("analytic moments only exist for synthetic kinds")

    def variance(self) -> float:
        if self.kind == "gamma":
            return self.shape * self.scale ** 2
        if self.kind == "logistic":
            return (math.pi * self.scale) ** 2 / 3.0
        if self.kind == "exponential":
            return self.scale ** 2
        raise TraceError("analytic moments only exist for synthetic kinds")

    def describe(self) -> str:
        if self.kind == "gamma":
            return f"gamma:shape={self.shape:g},scale={self.scale:g}"
        if self.kind == "logistic":
            return f"logistic:loc={self.loc:g},scale={self.scale:g}"
        if self.kind == "exponential":
            return f"exponential:scale={self.scale:g}"
        return f"file:{self.path}"


def parse_distribution(text: str) -> DistributionSpec:
    """Parse ``kind:key=value,...`` (or ``file:DIR``) into a spec.

    >>> parse_distribution("gamma:shape=1,scale=2").mean()
    2.0
    """
    kind, _, rest = text.strip().partition(":")
    kind = kind.strip().lower()
    if kind == "file":
        return DistributionSpec("file", path=rest.strip())
    kwargs = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, eq, value = item.partition("=")
        if not eq:
            raise TraceError(f"expected key=value in {text!r}")
        key = key.strip().lower()
        if key == "mu":
            key = "loc"
        if key not in ("shape", "scale", "loc", "floor"):
            raise TraceError(f"unknown distribution parameter {key!r}")
        try:
            kwargs[key] = float(value)
        except ValueError:
            raise TraceError(f"bad number {value!r} in {text!r}") from None
    return DistributionSpec(kind, **kwargs)


def draw(spec: DistributionSpec, size: int, rng: np.random.Generator) -> np.ndarray:
    if spec.kind == "gamma":
        x = rng.gamma(spec.shape, spec.scale, size)
    elif spec.kind == "logistic":
        x = rng.logistic(spec.loc, spec.scale, size)
    elif spec.kind == "exponential":
        x = rng.exponential(spec.scale, size)
    else:
        raise TraceError("cannot sample a file-backed distribution")
    return np.maximum(x, spec.floor)


def sample_synthetic(spec: DistributionSpec, steps: int, dt: float = 1.0,
                     seed: int = 0, trace_id: str = "") -> Trace:
    if steps < 1:
        raise TraceError("steps must be >= 1")
    if not dt > 0:
        raise TraceError("dt must be positive")
    rng = np.random.default_rng(seed)
    rates = draw(spec, steps, rng)
    return Trace(np.arange(steps) * float(dt), rates, trace_id)


def load_trace(path, trace_id: str | None = None) -> Trace:
    path = Path(path)
    times, rates = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise TraceError(f"{path}:{lineno}: expected 'timestamp throughput'")
            try:
                t, r = float(parts[0]), float(parts[1])
            except ValueError:
                raise TraceError(f"{path}:{lineno}: malformed number") from None
            if r < 0:
                raise TraceError(f"{path}:{lineno}: negative throughput")
            if times and t <= times[-1]:
                raise TraceError(f"{path}:{lineno}: timestamps must increase")
            times.append(t)
            rates.append(r)
    if not times:
        raise TraceError(f"{path}: no data")
    return Trace(np.array(times), np.array(rates), path.stem if trace_id is None else trace_id)


def write_trace(trace: Trace, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t, r in zip(trace.times.tolist(), trace.rates.tolist()):
            fh.write(f"{t!r} {r!r}\n")


def load_trace_dir(directory) -> list[Trace]:
    directory = Path(directory)
    if not directory.is_dir():
        raise TraceError(f"{directory}: not a directory")
    files = sorted(p for p in directory.iterdir() if p.is_file() and not p.name.startswith("."))
    if not files:
        raise TraceError(f"{directory}: no trace files")
    return [load_trace(p) for p in files]


@dataclass
class DatasetSplit:
    train: list[Trace] = field(default_factory=list)
    validation: list[Trace] = field(default_factory=list)
    test: list[Trace] = field(default_factory=list)


def split_dataset(traces: Sequence[Trace], train_fraction: float = 0.7,
                  validation_fraction_of_train: float = 0.3, seed: int = 0) -> DatasetSplit:
    """Shuffle and partition into train / validation / test.

    ``floor(n * train_fraction)`` traces are reserved for training, and
    ``floor(reserved * validation_fraction_of_train)`` of those are held out
    for validation; everything else is test.
    """
    if not (0 < train_fraction < 1 and 0 < validation_fraction_of_train < 1):
        raise TraceError("fractions must lie strictly between 0 and 1")
    n = len(traces)
    reserved = math.floor(n * train_fraction)
    n_val = math.floor(reserved * validation_fraction_of_train)
    n_train = reserved - n_val
    n_test = n - reserved
    if min(n_train, n_val, n_test) < 1:
        raise TraceError(f"{n} traces cannot populate train/validation/test")
    order = np.random.default_rng(seed).permutation(n)
    picked = [traces[i] for i in order]
    return DatasetSplit(train=picked[:n_train], validation=picked[n_train:reserved],
                        test=picked[reserved:])


def generate_dataset(spec: DistributionSpec, count: int, steps: int, dt: float = 1.0,
                     seed: int = 0, prefix: str = "trace") -> list[Trace]:
    """``count`` independent synthetic traces, or the files behind a file spec."""
    if not spec.synthetic:
        return load_trace_dir(spec.path)
    seeds = np.random.SeedSequence(seed).spawn(count)
    return [sample_synthetic(spec, steps, dt, int(s.generate_state(1)[0]), f"{prefix}-{i:04d}")
            for i, s in enumerate(seeds)]


def write_dataset(traces: Sequence[Trace], out_dir) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for tr in traces:
        name = f"{tr.id or 'trace'}.txt"
        write_trace(tr, Path(out_dir) / name)
        names.append(name)
    return names
