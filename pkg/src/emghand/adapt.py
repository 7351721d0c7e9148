"""Online adaptation service: buffer pairs, fine-tune on a cadence, ship
versioned weight snapshots to subscribed engines.

Each tick samples batches mixing the current session's recent windows
with retained historical ones, runs a fixed number of supervised steps,
bumps the model version and publishes a snapshot. A tick whose loss goes
non-finite is rolled back bit-exactly and publishes nothing. Time comes
from either a simulated clock (tests, demo --sim-clock) or wall time.
"""

from __future__ import annotations

import logging
import os
import socket
import threading
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import wire
from .handformer import HandFormer, NonFiniteLoss

log = logging.getLogger(__name__)


@dataclass
class AdaptationPolicy:
    tick_interval: float = 10.0
    steps_per_tick: int = 50
    batch_size: int = 16
    mix_ratio: float = 0.5          # fraction of each batch from recent
    recent_horizon: int = 7500      # ~5 minutes of stride-8 windows

    def __post_init__(self):
        if not 0.0 <= self.mix_ratio <= 1.0:
            raise ValueError("mix_ratio must be in [0, 1]")
        if self.steps_per_tick < 1:
            raise ValueError("steps_per_tick must be >= 1")
        if self.tick_interval <= 0:
            raise ValueError("tick_interval must be positive")


class ReplayBuffer:
    """Recent queue (current session) + historical store (older data).

    Overflow migrates from recent to historical, so nothing submitted is
    silently lost: len(recent) + len(historical) == accepted count.
    """

    def __init__(self, recent_capacity: int = 7500):
        self.recent: deque = deque()
        self.historical: list = []
        self.recent_capacity = recent_capacity

    def __len__(self):
        return len(self.recent) + len(self.historical)

    def submit(self, pairs) -> int:
        accepted = 0
        for pair in pairs:
            emg = getattr(pair, "emg", None)
            target = getattr(pair, "target", None)
            if emg is None or target is None or emg.shape != (8, 256) \
                    or target.shape != (32, 20):
                log.warning("skipping malformed pair: %r", pair)
                continue
            self.recent.append(pair)
            accepted += 1
            while len(self.recent) > self.recent_capacity:
                self.historical.append(self.recent.popleft())
        return accepted

    def add_historical(self, pairs):
        self.historical.extend(pairs)

    def sample(self, rng, batch_size: int, mix_ratio: float):
        """Batch arrays (windows, targets) drawn with replacement."""
        if not self.recent and not self.historical:
            raise ValueError("buffer is empty")
        n_recent = int(round(batch_size * mix_ratio))
        if not self.historical:
            n_recent = batch_size
        if not self.recent:
            n_recent = 0
        picks = []
        if n_recent:
            idx = rng.integers(0, len(self.recent), size=n_recent)
            picks.extend(self.recent[int(i)] for i in idx)
        n_hist = batch_size - n_recent
        if n_hist:
            idx = rng.integers(0, len(self.historical), size=n_hist)
            picks.extend(self.historical[int(i)] for i in idx)
        windows = np.stack([p.emg for p in picks])
        targets = np.stack([p.target for p in picks])
        return windows, targets


class AdaptServer:
    """In-process adaptation core; the TCP front end wraps it."""

    def __init__(self, model: HandFormer, policy: AdaptationPolicy | None = None,
                 seed: int = 0, snapshot_dir: str | None = None):
        self.model = model
        self.policy = policy or AdaptationPolicy()
        self.buffer = ReplayBuffer(self.policy.recent_horizon)
        self.rng = np.random.default_rng(seed)
        self.snapshot_dir = snapshot_dir
        self._lock = threading.RLock()
        self._subscribers: list = []
        self._latest_blob: bytes | None = None
        self._sim_time = 0.0
        self._next_tick = self.policy.tick_interval
        self.ticks_fired = 0
        self.ticks_skipped = 0
        self.ticks_failed = 0

    # -- data ----------------------------------------------------------------

    def submit(self, pairs) -> int:
        with self._lock:
            return self.buffer.submit(pairs)

    # -- adaptation ----------------------------------------------------------

    def adaptation_tick(self):
        """Run one fine-tune burst; returns the new snapshot blob or None.

        Skipped (None, no version bump) when no data has arrived yet.
        A non-finite loss rolls the model back to the tick start.
        """
        with self._lock:
            if not self.buffer.recent and not self.buffer.historical:
                self.ticks_skipped += 1
                return None
            pre = self.model.clone()
            try:
                for _ in range(self.policy.steps_per_tick):
                    windows, targets = self.buffer.sample(
                        self.rng, self.policy.batch_size,
                        self.policy.mix_ratio)
                    self.model.finetune_step(windows, targets)
            except NonFiniteLoss as exc:
                log.warning("tick rolled back: %s", exc)
                self.model.restore(pre)
                self.ticks_failed += 1
                return None
            self.model.bump_version()
            blob = self.model.to_bytes()
            self._latest_blob = blob
            self.ticks_fired += 1
            subscribers = list(self._subscribers)
        self._persist(blob, self.model.version)
        for fn in subscribers:
            fn(blob)
        return blob

    def _persist(self, blob: bytes, version: int):
        if not self.snapshot_dir:
            return
        os.makedirs(self.snapshot_dir, exist_ok=True)
        path = os.path.join(self.snapshot_dir, f"model_v{version}.alvw")
        with open(path, "wb") as fh:
            fh.write(blob)

    def subscribe(self, fn) -> bytes | None:
        """Register a snapshot callback; returns the latest blob, if any."""
        with self._lock:
            self._subscribers.append(fn)
            return self._latest_blob

    # -- clocks ---------------------------------------------------------------

    def advance(self, dt: float) -> list[int]:
        """Simulated clock: advance by dt seconds, firing any due ticks.

        Returns the versions of snapshots produced (skipped ticks absent).
        """
        fired = []
        self._sim_time += dt
        while self._next_tick <= self._sim_time + 1e-9:
            blob = self.adaptation_tick()
            if blob is not None:
                fired.append(self.model.version)
            self._next_tick += self.policy.tick_interval
        return fired

    def run_wall(self, stop: threading.Event, time_fn=None, sleep_fn=None):
        """Wall-clock tick loop; returns when ``stop`` is set."""
        import time as _time
        time_fn = time_fn or _time.monotonic
        sleep_fn = sleep_fn or _time.sleep
        next_due = time_fn() + self.policy.tick_interval
        while not stop.is_set():
            now = time_fn()
            if now >= next_due:
                self.adaptation_tick()
                next_due += self.policy.tick_interval
            else:
                sleep_fn(min(0.05, next_due - now))


class AdaptService:
    """TCP front end speaking the wire protocol.

    Message handling: PAIR frames feed the buffer; a CONTROL
    {"kind": "subscribe"} marks the connection as a snapshot subscriber
    (it immediately receives the latest snapshot when one exists); a
    CONTROL {"kind": "tick_now"} forces an adaptation tick.
    """

    def __init__(self, server: AdaptServer, port: int = wire.DEFAULT_ADAPT_PORT,
                 host: str = "127.0.0.1"):
        self.server = server
        self.host = host
        self.port = port
        self._sock: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._clients: list[socket.socket] = []
        self._clients_lock = threading.Lock()
        self._stop = threading.Event()
        self.server.subscribe(self._broadcast)

    def start(self):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((self.host, self.port))
        self.port = self._sock.getsockname()[1]
        self._sock.listen(8)
        t = threading.Thread(target=self._accept_loop, daemon=True)
        t.start()
        self._threads.append(t)

    def stop(self):
        self._stop.set()
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        with self._clients_lock:
            for c in self._clients:
                try:
                    c.close()
                except OSError:
                    pass
            self._clients.clear()

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            t = threading.Thread(target=self._serve_client, args=(conn,),
                                 daemon=True)
            t.start()
            self._threads.append(t)

    def _serve_client(self, conn: socket.socket):
        try:
            while not self._stop.is_set():
                msg = wire.recv_message(conn)
                if msg is None:
                    return
                self._handle(conn, msg)
        except (wire.WireError, OSError) as exc:
            log.info("client dropped: %s", exc)
        finally:
            with self._clients_lock:
                if conn in self._clients:
                    self._clients.remove(conn)
            try:
                conn.close()
            except OSError:
                pass

    def _handle(self, conn: socket.socket, msg):
        if isinstance(msg, wire.PairMsg):
            self.server.submit([msg])
        elif isinstance(msg, wire.ControlMsg):
            if msg.kind == "subscribe":
                with self._clients_lock:
                    self._clients.append(conn)
                with self.server._lock:
                    latest = self.server._latest_blob
                if latest is not None:
                    wire.send_message(conn, wire.WeightsBlob(latest))
                wire.send_message(conn, wire.ControlMsg("ack",
                                                        {"cmd": "subscribe"}))
            elif msg.kind == "tick_now":
                blob = self.server.adaptation_tick()
                wire.send_message(conn, wire.ControlMsg(
                    "ack", {"cmd": "tick_now",
                            "fired": blob is not None,
                            "version": self.server.model.version}))
            else:
                wire.send_message(conn, wire.ControlMsg(
                    "reject", {"error": f"unknown control {msg.kind!r}"}))
        else:
            log.info("ignoring unexpected message %r", type(msg).__name__)

    def _broadcast(self, blob: bytes):
        with self._clients_lock:
            clients = list(self._clients)
        dead = []
        for c in clients:
            try:
                wire.send_message(c, wire.WeightsBlob(blob))
            except OSError:
                dead.append(c)
        if dead:
            with self._clients_lock:
                for c in dead:
                    if c in self._clients:
                        self._clients.remove(c)
