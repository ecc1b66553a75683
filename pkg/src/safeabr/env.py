"""Chunked video streaming over a throughput trace.

Time advances one chunk download at a time.  Downloads integrate the trace
piecewise-constantly after one request RTT; the buffer drains while a chunk is
in flight and gains one chunk duration when it lands.  If that would overflow
the buffer cap the client idles until there is room (wall-clock time passes,
no rebuffering is charged).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .traces import Trace

DEFAULT_LABELS = ("240p", "360p", "480p", "720p", "1080p", "1400p")
DEFAULT_RATES = (0.3, 0.75, 1.2, 1.85, 2.85, 4.3)  # Mbps
BYTES_PER_MEGABIT = 1e6 / 8.0


class EnvError(ValueError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    rtt: float = 0.08
    rebuffer_penalty: float = 4.3
    buffer_cap: float = 60.0
    rate_floor: float = 0.01

    def __post_init__(self):
        if self.rtt < 0 or self.rebuffer_penalty < 0:
            raise EnvError("rtt and rebuffer penalty must be non-negative")
        if not self.buffer_cap > 0 or not self.rate_floor > 0:
            raise EnvError("buffer cap and rate floor must be positive")


@dataclass(frozen=True, eq=False)
class VideoManifest:
    labels: tuple
    rates: np.ndarray          # Mbps, strictly increasing
    chunk_duration: float      # seconds
    sizes: np.ndarray          # bytes, shape (levels, chunks)

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        sizes = np.asarray(self.sizes, dtype=np.int64)
        if rates.ndim != 1 or rates.size == 0:
            raise EnvError("ladder must be non-empty")
        if np.any(np.diff(rates) <= 0):
            raise EnvError("ladder rates must be strictly increasing")
        if sizes.ndim != 2 or sizes.shape[0] != rates.size or sizes.shape[1] < 1:
            raise EnvError("sizes must have one row per level and at least one chunk")
        if np.any(sizes <= 0):
            raise EnvError("chunk sizes must be positive")
        if not self.chunk_duration > 0:
            raise EnvError("chunk duration must be positive")
        if len(self.labels) != rates.size:
            raise EnvError("one label per level required")
        rates.setflags(write=False)
        sizes.setflags(write=False)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def levels(self) -> int:
        return self.rates.size

    @property
    def chunk_count(self) -> int:
        return self.sizes.shape[1]

    def __eq__(self, other):
        if not isinstance(other, VideoManifest):
            return NotImplemented
        return (self.labels == other.labels and self.chunk_duration == other.chunk_duration
                and np.array_equal(self.rates, other.rates)
                and np.array_equal(self.sizes, other.sizes))

    __hash__ = None


def synth_manifest(rates: Sequence[float] = DEFAULT_RATES, chunk_count: int = 48, repeats: int = 5,
                   chunk_duration: float = 4.0, size_noise_sigma: float = 0.1, seed: int = 0,
                   labels: Optional[Sequence[str]] = None) -> VideoManifest:
    """Synthetic constant-bitrate-ish encoding of a video looped ``repeats`` times.

    Each base chunk gets one multiplicative log-normal complexity factor shared
    by all levels; the repeats replay the same factors.
    """
    rates = np.asarray(rates, dtype=float)
    if rates.size == 0 or np.any(np.diff(rates) <= 0):
        raise EnvError("ladder must be non-empty and strictly increasing")
    if chunk_count < 1 or repeats < 1:
        raise EnvError("chunk_count and repeats must be >= 1")
    if size_noise_sigma < 0:
        raise EnvError("size_noise_sigma must be non-negative")
    if labels is None:
        labels = DEFAULT_LABELS if rates.size == len(DEFAULT_LABELS) else tuple(f"L{i}" for i in range(rates.size))
    rng = np.random.default_rng(seed)
    factor = np.exp(size_noise_sigma * rng.standard_normal(chunk_count)) if size_noise_sigma > 0 else np.ones(chunk_count)
    base = rates[:, None] * chunk_duration * BYTES_PER_MEGABIT * factor[None, :]
    sizes = np.maximum(np.rint(base), 1).astype(np.int64)
    return VideoManifest(tuple(labels), rates, float(chunk_duration), np.tile(sizes, (1, repeats)))


def write_manifest(manifest: VideoManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{manifest.chunk_duration!r}\n")
        fh.write(" ".join(repr(r) for r in manifest.rates.tolist()) + "\n")
        for row in manifest.sizes:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")
        fh.write("# labels: " + " ".join(manifest.labels) + "\n")


def load_manifest(path) -> VideoManifest:
    """Read a manifest: duration line, rates line, one size row per level.

    Lines starting with ``#`` are comments; ``# labels: a b c`` names levels.
    """
    labels = None
    rows = []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("labels:"):
                    labels = tuple(body[len("labels:"):].split())
                continue
            rows.append(line.split())
    if len(rows) < 3:
        raise EnvError(f"{path}: need duration, ladder and at least one size row")
    try:
        duration = float(rows[0][0]) if len(rows[0]) == 1 else None
        rates = [float(v) for v in rows[1]]
        sizes = [[int(v) for v in r] for r in rows[2:]]
    except ValueError:
        raise EnvError(f"{path}: malformed number") from None
    if duration is None:
        raise EnvError(f"{path}: first line must hold only the chunk duration")
    if len(sizes) != len(rates):
        raise EnvError(f"{path}: {len(rates)} levels but {len(sizes)} size rows")
    if len({len(r) for r in sizes}) != 1:
        raise EnvError(f"{path}: size rows differ in length")
    if labels is None or len(labels) != len(rates):
        labels = DEFAULT_LABELS if len(rates) == len(DEFAULT_LABELS) else tuple(f"L{i}" for i in range(len(rates)))
    return VideoManifest(labels, np.array(rates), duration, np.array(sizes, dtype=np.int64))


# --------------------------------------------------------------------------

class _Link:
    """Trace arrays prepared for the transfer kernel."""

    __slots__ = ("times", "rates", "period", "floor")

    def __init__(self, trace: Trace, floor: float):
        self.times = np.ascontiguousarray(trace.relative_times())
        self.rates = np.ascontiguousarray(np.maximum(trace.rates, floor))
        self.period = trace.period
        self.floor = floor


def _link(trace: Trace, floor: float) -> _Link:
    cached = trace.__dict__.get("_link")
    if cached is None or cached.floor != floor:
        cached = _Link(trace, floor)
        object.__setattr__(trace, "_link", cached)
    return cached


def download_time(size: float, trace: Trace, cursor: float, rtt: float,
                  rate_floor: float = 0.01) -> tuple[float, float]:
    """Seconds to fetch ``size`` bytes starting at ``cursor``, and the new cursor.

    One RTT elapses before the payload starts flowing.  The cursor is a
    position inside the trace's replay period.
    """
    if not size > 0:
        raise EnvError("chunk size must be positive")
    link = _link(trace, rate_floor)
    start = (cursor + rtt) % link.period
    transfer = kernels.transfer_time(link.times, link.rates, link.period, start, size / BYTES_PER_MEGABIT)
    elapsed = rtt + transfer
    return elapsed, (cursor + elapsed) % link.period


def qoe_chunk(bitrate: float, rebuffer: float, prev_bitrate: Optional[float],
              rebuffer_penalty: float = 4.3) -> float:
    smooth = 0.0 if prev_bitrate is None else abs(bitrate - prev_bitrate)
    return bitrate - rebuffer_penalty * rebuffer - smooth


@dataclass(frozen=True)
class SessionState:
    chunk_index: int = 0
    buffer: float = 0.0
    last_level: Optional[int] = None
    # (download_time s, chunk_size bytes, throughput_estimate Mbps) per chunk
    download_history: tuple = ()
    trace_cursor: float = 0.0
    wall_clock: float = 0.0

    def throughputs(self, last: Optional[int] = None) -> np.ndarray:
        hist = self.download_history if last is None else self.download_history[-last:]
        return np.array([h[2] for h in hist], dtype=float)

    def download_times(self, last: Optional[int] = None) -> np.ndarray:
        hist = self.download_history if last is None else self.download_history[-last:]
        return np.array([h[0] for h in hist], dtype=float)


def initial_state(trace: Trace, start: float = 0.0) -> SessionState:
    return SessionState(trace_cursor=start % trace.period)


@dataclass(frozen=True)
class StepOutcome:
    next_state: SessionState
    download_time: float
    rebuffer_time: float
    bitrate: float
    qoe: float
    done: bool
    wait_time: float = 0.0


def step(state: SessionState, action: int, trace: Trace, manifest: VideoManifest,
         cfg: EnvConfig = EnvConfig()) -> StepOutcome:
    if state.chunk_index >= manifest.chunk_count:
        raise EnvError("session already finished")
    if not 0 <= action < manifest.levels:
        raise EnvError(f"invalid level {action}")
    size = int(manifest.sizes[action, state.chunk_index])
    dl, cursor = download_time(size, trace, state.trace_cursor, cfg.rtt, cfg.rate_floor)
    rebuffer = max(0.0, dl - state.buffer)
    buffer = max(state.buffer - dl, 0.0) + manifest.chunk_duration
    wait = 0.0
    if buffer > cfg.buffer_cap:
        wait = buffer - cfg.buffer_cap
        buffer = cfg.buffer_cap
        cursor = (cursor + wait) % trace.period
    bitrate = float(manifest.rates[action])
    prev = None if state.last_level is None else float(manifest.rates[state.last_level])
    qoe = qoe_chunk(bitrate, rebuffer, prev, cfg.rebuffer_penalty)
    transfer = dl - cfg.rtt
    estimate = (size / BYTES_PER_MEGABIT) / transfer if transfer > 0 else float("inf")
    nxt = SessionState(
        chunk_index=state.chunk_index + 1,
        buffer=buffer,
        last_level=int(action),
        download_history=state.download_history + ((dl, size, estimate),),
        trace_cursor=cursor,
        wall_clock=state.wall_clock + dl + wait,
    )
    return StepOutcome(nxt, dl, rebuffer, bitrate, qoe, nxt.chunk_index == manifest.chunk_count, wait)


def episode_qoe(bitrates: Sequence[float], rebuffers: Sequence[float], rebuffer_penalty: float) -> float:
    """Whole-session QoE straight from the bitrate and stall sequences."""
    r = np.asarray(bitrates, dtype=float)
    t = np.asarray(rebuffers, dtype=float)
    return float(r.sum() - rebuffer_penalty * t.sum() - np.abs(np.diff(r)).sum())
