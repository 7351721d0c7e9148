"""Timestamped multichannel streams, buffering and grid alignment.

All producers stamp samples from one session clock (seconds from session
start). A stream is a sequence of non-overlapping chunks on a uniform
sample grid; the buffer retains a sliding horizon and serves window reads
and multi-stream alignment from a consistent snapshot.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from . import kernels

CHANNELS_BY_KIND = {"emg": 8, "pose_quat": 84, "pose_angles": 20}

DEFAULT_HORIZON_S = 120.0

# tolerance for "these two timestamps are the same grid node"
GRID_EPS = 1e-9


class StreamError(Exception):
    pass


class UnknownStreamError(StreamError):
    pass


class ChunkOrderError(StreamError):
    """Chunk starts before the end of the previous chunk on its stream."""


class CoverageError(StreamError):
    """Requested time span is not (fully, contiguously) buffered yet."""


@dataclass(frozen=True)
class StreamInfo:
    stream_id: int
    name: str
    channel_count: int
    nominal_rate: float
    kind: str

    def __post_init__(self):
        if self.stream_id < 0 or self.stream_id > 0xFFFF:
            raise ValueError(f"stream_id {self.stream_id} out of u16 range")
        if self.nominal_rate <= 0:
            raise ValueError("nominal_rate must be positive")
        if self.kind not in CHANNELS_BY_KIND:
            raise ValueError(f"unknown stream kind {self.kind!r}")
        expected = CHANNELS_BY_KIND[self.kind]
        if self.channel_count != expected:
            raise ValueError(
                f"kind {self.kind!r} requires {expected} channels, "
                f"got {self.channel_count}")


class SampleChunk:
    """A block of consecutive samples: sample i is at ``t0 + i / rate``."""

    __slots__ = ("stream_id", "t0", "rate", "samples")

    def __init__(self, stream_id: int, t0: float, rate: float, samples):
        samples = np.asarray(samples, dtype=np.float32)
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise ValueError("samples must be a non-empty (n, channels) matrix")
        if t0 < 0:
            raise ValueError("t0 must be >= 0")
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.stream_id = int(stream_id)
        self.t0 = float(t0)
        # rate travels as f32 on the wire; normalize so round-trips are exact
        self.rate = float(np.float32(rate))
        self.samples = samples

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def channel_count(self) -> int:
        return self.samples.shape[1]

    @property
    def end(self) -> float:
        """End of the chunk's time slot (start of the next valid chunk)."""
        return self.t0 + self.n_samples / self.rate

    def __eq__(self, other):
        return (isinstance(other, SampleChunk)
                and self.stream_id == other.stream_id
                and self.t0 == other.t0
                and self.rate == other.rate
                and self.samples.shape == other.samples.shape
                and np.array_equal(self.samples, other.samples))

    def __repr__(self):
        return (f"SampleChunk(stream={self.stream_id}, t0={self.t0:.4f}, "
                f"rate={self.rate}, n={self.n_samples}x{self.channel_count})")


@dataclass
class AlignedTrack:
    """Gap-free uniform-grid track; sample i is at ``t0 + i / rate``."""

    t0: float
    rate: float
    values: np.ndarray  # (n, channels)
    stream_ids: tuple = ()

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def end(self) -> float:
        """Timestamp of the last sample."""
        return self.t0 + (self.n - 1) / self.rate

    @property
    def duration(self) -> float:
        return self.n / self.rate

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n) / self.rate

    def sample_at(self, times) -> np.ndarray:
        """Linear interpolation at arbitrary times (grid nodes copied exactly)."""
        return kernels.interp_rows(
            np.ascontiguousarray(self.values), self.t0, self.rate,
            np.atleast_1d(np.asarray(times, dtype=np.float64)))


@dataclass
class _StreamSlot:
    info: StreamInfo
    chunks: list = field(default_factory=list)  # ordered, non-overlapping


class StreamBuffer:
    """Holds the recent history of several registered streams.

    One writer per stream, any number of readers; a single lock makes every
    read a consistent snapshot (no torn chunks).
    """

    def __init__(self, horizon: float = DEFAULT_HORIZON_S):
        if horizon <= 0:
            raise ValueError("horizon must be positive")
        self.horizon = float(horizon)
        self._slots: dict[int, _StreamSlot] = {}
        self._lock = threading.RLock()

    def register(self, info: StreamInfo):
        with self._lock:
            if info.stream_id in self._slots:
                raise ValueError(f"stream {info.stream_id} already registered")
            self._slots[info.stream_id] = _StreamSlot(info)

    def info(self, stream_id: int) -> StreamInfo:
        return self._slot(stream_id).info

    def _slot(self, stream_id: int) -> _StreamSlot:
        try:
            return self._slots[stream_id]
        except KeyError:
            raise UnknownStreamError(f"stream {stream_id} is not registered") from None

    def push_chunk(self, chunk: SampleChunk):
        with self._lock:
            slot = self._slot(chunk.stream_id)
            info = slot.info
            if chunk.channel_count != info.channel_count:
                raise StreamError(
                    f"stream {info.stream_id}: chunk has {chunk.channel_count} "
                    f"channels, stream declares {info.channel_count}")
            if abs(chunk.rate - info.nominal_rate) > GRID_EPS * info.nominal_rate:
                raise StreamError(
                    f"stream {info.stream_id}: chunk rate {chunk.rate} != "
                    f"nominal {info.nominal_rate}")
            if slot.chunks:
                prev_end = slot.chunks[-1].end
                if chunk.t0 < prev_end - GRID_EPS:
                    raise ChunkOrderError(
                        f"stream {info.stream_id}: chunk t0={chunk.t0:.9f} "
                        f"overlaps buffered data ending at {prev_end:.9f}")
            slot.chunks.append(chunk)
            self._evict(slot)

    def _evict(self, slot: _StreamSlot):
        cutoff = slot.chunks[-1].end - self.horizon
        while slot.chunks and slot.chunks[0].end < cutoff:
            slot.chunks.pop(0)

    def end_time(self, stream_id: int) -> float:
        """End of buffered data (0.0 when the stream is still empty)."""
        with self._lock:
            slot = self._slot(stream_id)
            return slot.chunks[-1].end if slot.chunks else 0.0

    def _contiguous_span(self, slot: _StreamSlot, ta: float, tb: float):
        """Collect buffered samples covering [ta, tb] on one uniform grid.

        Returns (t0, values) or raises CoverageError on any gap.
        """
        rate = slot.info.nominal_rate
        tol = 0.5 / rate
        picked = []
        for ch in slot.chunks:
            if ch.end < ta - tol or ch.t0 > tb + tol:
                continue
            picked.append(ch)
        if not picked:
            raise CoverageError(
                f"stream {slot.info.stream_id}: no data in [{ta:.4f}, {tb:.4f}]")
        last_t = picked[0].t0 + (picked[0].n_samples - 1) / rate
        for prev, nxt in zip(picked, picked[1:]):
            if nxt.t0 - prev.end > tol:
                raise CoverageError(
                    f"stream {slot.info.stream_id}: gap between {prev.end:.4f} "
                    f"and {nxt.t0:.4f} inside requested span")
            last_t = nxt.t0 + (nxt.n_samples - 1) / rate
        if picked[0].t0 > ta + GRID_EPS or last_t < tb - GRID_EPS:
            raise CoverageError(
                f"stream {slot.info.stream_id}: buffered "
                f"[{picked[0].t0:.4f}, {last_t:.4f}] does not cover "
                f"[{ta:.4f}, {tb:.4f}]")
        values = np.concatenate([c.samples for c in picked], axis=0)
        return picked[0].t0, values

    def sample_window(self, stream_id: int, t_end: float, n: int,
                      rate: float) -> np.ndarray:
        """Last ``n`` samples at ``rate`` ending exactly at ``t_end``.

        Values are copied when the requested grid hits buffered samples and
        linearly interpolated per channel otherwise. Raises CoverageError
        when history is insufficient (caller should wait for more data).
        """
        if n < 1 or rate <= 0:
            raise ValueError("need n >= 1 and rate > 0")
        t_first = t_end - (n - 1) / rate
        if t_first < -GRID_EPS:
            raise CoverageError("window starts before the session clock zero")
        with self._lock:
            slot = self._slot(stream_id)
            t0, values = self._contiguous_span(slot, t_first, t_end)
        times = t_end - (n - 1 - np.arange(n)) / rate
        return kernels.interp_rows(values, t0, slot.info.nominal_rate, times)

    def align(self, stream_ids, t0: float, t1: float, rate: float) -> AlignedTrack:
        """Interpolate several streams onto one shared grid over [t0, t1].

        Channels are concatenated in ``stream_ids`` order. The grid covers
        t0, t0 + 1/rate, ... up to the last node <= t1.
        """
        if t1 < t0:
            raise ValueError("t1 must be >= t0")
        if rate <= 0:
            raise ValueError("rate must be positive")
        n = int(np.floor((t1 - t0) * rate + GRID_EPS)) + 1
        times = t0 + np.arange(n) / rate
        parts = []
        with self._lock:
            for sid in stream_ids:
                slot = self._slot(sid)
                src_t0, values = self._contiguous_span(slot, t0, times[-1])
                parts.append(kernels.interp_rows(
                    values, src_t0, slot.info.nominal_rate, times))
        merged = np.concatenate([p.astype(np.float64) for p in parts], axis=1)
        return AlignedTrack(t0=t0, rate=rate, values=merged,
                            stream_ids=tuple(stream_ids))
