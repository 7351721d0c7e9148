"""25 Hz streaming inference engine over a 200 Hz EMG feed.

Every 8th incoming sample (one output period) after warm-up, the engine
runs the model on the latest 256-sample window, takes the most recent of
the 32 predicted frames, EMA-smooths it and emits it stamped with the
window-end time. Weight swaps land atomically between ticks, so each
emitted frame is attributable to exactly one model version, and replaying
the same input reproduces the same output bit for bit.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .handformer import ConfigMismatch, HandFormer
from .preprocess import minmax_normalize

TIME_EPS = 1e-6


@dataclass
class EngineConfig:
    in_rate: float = 200.0
    out_rate: float = 25.0
    window_len: int = 256
    ema_alpha: float = 0.5
    deadline_s: float = 0.040
    # drop frames whose inference overruns the deadline; off in replay so
    # outputs stay a pure function of the input stream
    enforce_deadline: bool = False

    def __post_init__(self):
        step = self.in_rate / self.out_rate
        if abs(step - round(step)) > 1e-9 or step < 1:
            raise ValueError("in_rate must be an integer multiple of out_rate")
        if not 0.0 < self.ema_alpha <= 1.0:
            raise ValueError("ema_alpha must be in (0, 1]")

    @property
    def samples_per_tick(self) -> int:
        return int(round(self.in_rate / self.out_rate))


@dataclass
class PoseFrame:
    t: float
    angles: np.ndarray       # (20,) float32
    model_version: int


@dataclass
class EngineStats:
    ticks: int = 0
    frames_emitted: int = 0
    frames_dropped: int = 0
    model_version: int = 0
    output_period_s: float = 0.04
    algorithmic_latency_s: float = 0.04
    tick_times: list = field(default_factory=list)
    deadline_violations: int = 0

    def percentile_s(self, q: float) -> float:
        if not self.tick_times:
            return 0.0
        return float(np.percentile(np.array(self.tick_times), q))

    def summary(self) -> dict:
        return {
            "ticks": self.ticks,
            "frames_emitted": self.frames_emitted,
            "frames_dropped": self.frames_dropped,
            "model_version": self.model_version,
            "output_period_ms": self.output_period_s * 1e3,
            "algorithmic_latency_ms": self.algorithmic_latency_s * 1e3,
            "p50_tick_ms": self.percentile_s(50) * 1e3,
            "p99_tick_ms": self.percentile_s(99) * 1e3,
            "max_tick_ms": (max(self.tick_times) * 1e3
                            if self.tick_times else 0.0),
            "deadline_violations": self.deadline_violations,
        }


def ema_smooth(prev, new, alpha: float):
    """s = alpha * new + (1 - alpha) * prev, elementwise."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0, 1]")
    if prev is None:
        return np.asarray(new).copy()
    return alpha * np.asarray(new) + (1.0 - alpha) * np.asarray(prev)


class RealtimeEngine:
    """Single ingest thread; swaps and stats access may come from others."""

    def __init__(self, model: HandFormer, config: EngineConfig | None = None):
        self.config = config or EngineConfig()
        self._model = model
        self._pending: HandFormer | None = None
        self._swap_lock = threading.Lock()
        self._stats_lock = threading.Lock()
        self._stats = EngineStats(
            model_version=model.version,
            output_period_s=1.0 / self.config.out_rate,
            algorithmic_latency_s=1.0 / self.config.out_rate)
        cfg = self.config
        self._win = np.zeros((cfg.window_len, 8), dtype=np.float32)
        self._filled = 0
        self._total = 0
        self._anchor: float | None = None
        self._ema_state: np.ndarray | None = None

    # -- weight management ---------------------------------------------------

    def swap_weights(self, snapshot: HandFormer) -> int:
        """Stage a snapshot; it takes effect at the next tick boundary.

        Only the newest pending snapshot survives. Returns its version.
        """
        if snapshot.config != self._model.config:
            raise ConfigMismatch(
                "snapshot model config differs from the engine's")
        with self._swap_lock:
            self._pending = snapshot
        return snapshot.version

    def _maybe_adopt_pending(self):
        with self._swap_lock:
            pending, self._pending = self._pending, None
        if pending is not None:
            self._model = pending
            with self._stats_lock:
                self._stats.model_version = pending.version

    @property
    def model_version(self) -> int:
        return self._model.version

    # -- ingest ---------------------------------------------------------------

    def ingest(self, t0: float, samples) -> list[PoseFrame]:
        """Feed raw EMG samples (n, 8) starting at time t0; returns any
        frames produced. Chunk times must continue the sample grid."""
        samples = np.asarray(samples, dtype=np.float32)
        if samples.ndim != 2 or samples.shape[1] != 8:
            raise ValueError("expected (n, 8) EMG samples")
        rate = self.config.in_rate
        if self._anchor is None:
            self._anchor = float(t0)
        else:
            expected = self._anchor + self._total / rate
            if t0 < expected - TIME_EPS:
                raise ValueError(
                    f"non-monotone chunk: t0={t0:.6f} < expected "
                    f"{expected:.6f}")
            if abs(t0 - expected) > 0.5 / rate:
                # gap in the feed: refill the window from scratch; the EMA
                # state and counters survive so output stays smooth
                self._anchor = float(t0)
                self._total = 0
                self._filled = 0
        normalized = minmax_normalize(samples)
        frames: list[PoseFrame] = []
        step = self.config.samples_per_tick
        wlen = self.config.window_len
        for row in normalized:
            if self._filled < wlen:
                self._win[self._filled] = row
                self._filled += 1
            else:
                self._win[:-1] = self._win[1:]
                self._win[-1] = row
            self._total += 1
            if self._filled >= wlen and (self._total - wlen) % step == 0:
                frame = self._tick()
                if frame is not None:
                    frames.append(frame)
        return frames

    def ingest_chunk(self, chunk) -> list[PoseFrame]:
        return self.ingest(chunk.t0, chunk.samples)

    def _tick(self):
        self._maybe_adopt_pending()
        t_end = self._anchor + (self._total - 1) / self.config.in_rate
        started = time.perf_counter()
        try:
            pred = self._model.forward(np.ascontiguousarray(self._win.T))
        except Exception:
            with self._stats_lock:
                self._stats.ticks += 1
                self._stats.frames_dropped += 1
            return None
        elapsed = time.perf_counter() - started
        last = pred[-1]
        overrun = elapsed > self.config.deadline_s
        with self._stats_lock:
            self._stats.ticks += 1
            self._stats.tick_times.append(elapsed)
            if len(self._stats.tick_times) > 100000:
                del self._stats.tick_times[:50000]
            if overrun:
                self._stats.deadline_violations += 1
            if overrun and self.config.enforce_deadline:
                self._stats.frames_dropped += 1
                dropped = True
            else:
                self._stats.frames_emitted += 1
                dropped = False
        if dropped:
            return None
        if not np.isfinite(last).all():
            with self._stats_lock:
                self._stats.frames_emitted -= 1
                self._stats.frames_dropped += 1
            return None
        smoothed = ema_smooth(self._ema_state, last, self.config.ema_alpha)
        self._ema_state = smoothed
        return PoseFrame(t=t_end,
                         angles=smoothed.astype(np.float32),
                         model_version=self._model.version)

    # -- reporting -------------------------------------------------------------

    def latency_report(self) -> EngineStats:
        with self._stats_lock:
            snap = EngineStats(
                ticks=self._stats.ticks,
                frames_emitted=self._stats.frames_emitted,
                frames_dropped=self._stats.frames_dropped,
                model_version=self._stats.model_version,
                output_period_s=self._stats.output_period_s,
                algorithmic_latency_s=self._stats.algorithmic_latency_s,
                tick_times=list(self._stats.tick_times),
                deadline_violations=self._stats.deadline_violations)
        return snap


class RealtimeService:
    """TCP front end: EMG chunks in, pose-frame chunks straight back.

    Clients speak the wire protocol on one connection: CHUNK frames feed
    the engine and every produced pose frame returns as a single-row
    CHUNK on the pose-angles stream (20 channels at 25 Hz). WEIGHTS
    frames hot-swap the model; CONTROL {"kind": "stats"} answers with an
    engine report.
    """

    POSE_STREAM_ID = 3

    def __init__(self, engine: RealtimeEngine, port: int = 0,
                 host: str = "127.0.0.1"):
        from . import wire
        self._wire = wire
        self.engine = engine
        self.host = host
        self.port = port
        self._sock = None
        self._stop = threading.Event()

    def start(self):
        import socket
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((self.host, self.port))
        self.port = self._sock.getsockname()[1]
        self._sock.listen(4)
        threading.Thread(target=self._accept_loop, daemon=True).start()

    def stop(self):
        self._stop.set()
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            threading.Thread(target=self._serve, args=(conn,),
                             daemon=True).start()

    def _serve(self, conn):
        wire = self._wire
        from .handformer import HandFormer
        from .streams import SampleChunk
        try:
            while not self._stop.is_set():
                msg = wire.recv_message(conn)
                if msg is None:
                    return
                if isinstance(msg, SampleChunk):
                    frames = self.ingest_and_reply(msg)
                    for frame in frames:
                        chunk = self._frame_chunk(frame)
                        wire.send_message(conn, chunk)
                elif isinstance(msg, wire.WeightsBlob):
                    snap = HandFormer.from_bytes(msg.data)
                    version = self.engine.swap_weights(snap)
                    wire.send_message(conn, wire.ControlMsg(
                        "ack", {"cmd": "swap", "version": version}))
                elif isinstance(msg, wire.ControlMsg) and msg.kind == "stats":
                    wire.send_message(conn, wire.ControlMsg(
                        "stats", self.engine.latency_report().summary()))
        except (wire.WireError, OSError, ValueError):
            pass
        finally:
            try:
                conn.close()
            except OSError:
                pass

    def ingest_and_reply(self, chunk):
        return self.engine.ingest_chunk(chunk)

    def _frame_chunk(self, frame: PoseFrame):
        from .streams import SampleChunk
        return SampleChunk(self.POSE_STREAM_ID, frame.t,
                           self.engine.config.out_rate,
                           frame.angles.reshape(1, -1))
