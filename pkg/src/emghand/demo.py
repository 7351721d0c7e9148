"""Closed-loop demo: synthetic feed -> realtime engine -> adaptation server,
with the websocket bridge for the operator dashboard.

One orchestrator loop advances the pipeline in fixed blocks of stream
time. In --sim-clock mode blocks run back to back (deterministic, exits
after --duration); otherwise they are paced to the wall clock and the
demo runs until interrupted. Adaptation ticks are driven by stream time
in both modes, so behaviour only differs in pacing.
"""

from __future__ import annotations

import threading
import time

import numpy as np

from . import kernels
from .adapt import AdaptationPolicy, AdaptServer
from .handformer import HandFormer, ModelConfig
from .preprocess import (EMG_RATE, FRAME_RATE, N_ANGLES, POSE_RATE,
                         TARGET_FRAMES, WINDOW_LEN, minmax_normalize)
from .realtime import EngineConfig, RealtimeEngine
from .synthgen import (MuscleModel, activation, default_muscle_model,
                       gesture_angles_at, gesture_spec, _bandlimited_noise)
from .wire import DEFAULT_BRIDGE_PORT
from .preprocess import WindowPair

BLOCK_S = 0.2
BLOCK_POSE = int(BLOCK_S * POSE_RATE)    # 8 pose frames
BLOCK_EMG = int(BLOCK_S * EMG_RATE)      # 40 EMG samples
SWITCH_BLEND_S = 0.25
PAIR_STRIDE = 32                          # one training pair per 0.16 s


class StreamingGenerator:
    """Block-wise paired pose/EMG source with a switchable prompted gesture."""

    def __init__(self, model: MuscleModel, seed: int = 0):
        self.model = model
        self.rng = np.random.default_rng(seed)
        self.t = 0.0
        self.gesture_id: int | None = None
        self._gesture_t0 = 0.0
        self._blend_from = np.zeros(N_ANGLES)
        self._blend_t0 = -1e9
        self._prev_angles = np.zeros((1, N_ANGLES))

    def set_gesture(self, gesture_id: int | None):
        self._blend_from = self._prev_angles[-1].copy()
        self._blend_t0 = self.t
        self.gesture_id = gesture_id
        self._gesture_t0 = self.t

    def _angles(self, times):
        if self.gesture_id is None:
            raw = np.zeros((times.size, N_ANGLES))
        else:
            spec = gesture_spec(self.gesture_id)
            raw = gesture_angles_at(spec, times - self._gesture_t0)
        u = np.clip((times - self._blend_t0) / SWITCH_BLEND_S, 0.0, 1.0)
        w = 0.5 * (1.0 - np.cos(np.pi * u))
        return (1.0 - w)[:, None] * self._blend_from[None, :] \
            + w[:, None] * raw

    def next_block(self):
        """Returns (t0, pose (8, 20) @40 Hz, emg (40, 8) @200 Hz)."""
        t0 = self.t
        pose_times = t0 + np.arange(BLOCK_POSE) / POSE_RATE
        angles = self._angles(pose_times)
        ext = np.concatenate([self._prev_angles[-2:], angles], axis=0)
        act = activation(ext, self.model, POSE_RATE)[-BLOCK_POSE:]
        emg_times = t0 + np.arange(BLOCK_EMG) / EMG_RATE
        env = kernels.interp_rows(
            np.ascontiguousarray(act), t0, POSE_RATE, emg_times)
        carrier = _bandlimited_noise(self.rng, BLOCK_EMG, 8, EMG_RATE, 8.0,
                                     self.model.bandwidth)
        floor = _bandlimited_noise(self.rng, BLOCK_EMG, 8, EMG_RATE, 8.0,
                                   self.model.bandwidth)
        emg = env * carrier + self.model.noise_floor * floor
        emg = np.clip(emg, -128.0, 127.0).astype(np.float32)
        self._prev_angles = ext
        self.t = t0 + BLOCK_S
        return t0, angles, emg


class StreamPairer:
    """Builds training pairs from the rolling (EMG, ground truth) history."""

    def __init__(self):
        self._emg = np.zeros((0, 8), dtype=np.float32)
        self._angles = np.zeros((0, N_ANGLES))
        self._count = 0

    def push(self, emg_block, angle_block):
        self._emg = np.concatenate([self._emg, emg_block])[-4 * WINDOW_LEN:]
        reps = int(EMG_RATE / POSE_RATE)
        dense = np.repeat(angle_block, reps, axis=0)
        self._angles = np.concatenate([self._angles, dense])[-4 * WINDOW_LEN:]
        self._count += emg_block.shape[0]
        pairs = []
        while self._count >= PAIR_STRIDE and self._emg.shape[0] >= WINDOW_LEN:
            self._count -= PAIR_STRIDE
            win = minmax_normalize(self._emg[-WINDOW_LEN:]).T.copy()
            frame_idx = -1 - np.arange(TARGET_FRAMES)[::-1] * 8
            target = self._angles[frame_idx].astype(np.float32)
            pairs.append(WindowPair(win, target, 0.0))
        return pairs


class DemoController:
    """Wires generator, engine, adaptation and bridge; applies commands.

    With ``async_ticks`` the due adaptation ticks run on a worker thread
    (skip-if-busy, so no backlog) and the 25 Hz stream never stalls on a
    single-core box; the deterministic sim-clock path keeps them inline.
    """

    def __init__(self, seed: int = 0, model_path: str | None = None,
                 policy: AdaptationPolicy | None = None,
                 async_ticks: bool = False):
        kernels.warmup()
        muscle = default_muscle_model(seed)
        self.generator = StreamingGenerator(muscle, seed=seed + 1)
        model = HandFormer.load(model_path) if model_path \
            else HandFormer(ModelConfig(seed=seed))
        self.engine = RealtimeEngine(model.clone(), EngineConfig())
        self.server = AdaptServer(model, policy or AdaptationPolicy(
            steps_per_tick=10, batch_size=8), seed=seed + 2)
        self.pairer = StreamPairer()
        self.bridge = None
        self.async_ticks = async_ticks
        self._tick_worker: threading.Thread | None = None
        self._stream_t = 0.0
        self._next_tick = self.server.policy.tick_interval
        self._lock = threading.Lock()
        self._snapshots: dict[int, bytes] = {}
        self._recent_pred: list = []
        self._recent_truth: list = []
        self._last_metrics_t = 0.0
        self.server.subscribe(self._on_snapshot)

    # -- events ----------------------------------------------------------------

    def _emit(self, event: dict):
        if self.bridge is not None:
            self.bridge.broadcast(event)

    def _on_snapshot(self, blob: bytes):
        snap = HandFormer.from_bytes(blob)
        with self._lock:
            self._snapshots[snap.version] = blob
        self.engine.swap_weights(snap)
        self._emit({"type": "model_version", "v": snap.version})

    # -- pipeline ----------------------------------------------------------------

    def step_block(self):
        """Advance the pipeline by one block of stream time."""
        t0, angles, emg = self.generator.next_block()
        frames = self.engine.ingest(t0, emg)
        for f in frames:
            self._emit({"type": "pose", "t": round(f.t, 6),
                        "angles": [float(a) for a in f.angles],
                        "v": f.model_version})
        truth_end = angles[-1]
        for f in frames:
            self._recent_pred.append(f.angles)
            self._recent_truth.append(truth_end)
        pairs = self.pairer.push(emg, angles)
        if pairs:
            self.server.submit(pairs)
        self._advance_clock(BLOCK_S)
        if t0 - self._last_metrics_t >= 0.5 and len(self._recent_pred) >= 25:
            self._last_metrics_t = t0
            pred = np.array(self._recent_pred[-125:])
            truth = np.array(self._recent_truth[-125:])
            err = float(np.degrees(np.abs(pred - truth).mean()))
            self._emit({"type": "metrics", "t": round(t0, 6),
                        "error_deg": round(err, 3),
                        "window_count": len(pred),
                        "buffered_pairs": len(self.server.buffer)})
        return frames

    def _advance_clock(self, dt: float):
        if not self.async_ticks:
            self.server.advance(dt)
            return
        self._stream_t += dt
        due = self._stream_t + 1e-9 >= self._next_tick
        busy = self._tick_worker is not None and self._tick_worker.is_alive()
        if due and not busy:
            self._next_tick += self.server.policy.tick_interval
            self._tick_worker = threading.Thread(
                target=self.server.adaptation_tick, daemon=True)
            self._tick_worker.start()
        elif due and busy:
            pass  # previous tick still training; try again next block

    # -- commands ----------------------------------------------------------------

    def handle_command(self, cmd: dict) -> dict:
        kind = cmd.get("type")
        if kind == "finetune_now":
            blob = self.server.adaptation_tick()
            return {"type": "ack", "cmd": kind, "ok": blob is not None,
                    "v": self.server.model.version,
                    **({} if blob is not None else
                       {"error": "tick skipped (no data or non-finite loss)"})}
        if kind == "swap_model":
            v = cmd.get("v")
            with self._lock:
                blob = self._snapshots.get(v)
                available = sorted(self._snapshots)
            if blob is None:
                return {"type": "ack", "cmd": kind, "ok": False,
                        "error": f"unknown version {v}",
                        "available": available}
            snap = HandFormer.from_bytes(blob)
            noop = snap.version == self.engine.model_version
            self.engine.swap_weights(snap)
            return {"type": "ack", "cmd": kind, "ok": True, "v": snap.version,
                    "noop": noop}
        if kind == "start_gesture":
            gid = int(cmd.get("id", 0))
            self.generator.set_gesture(gid)
            self._emit({"type": "gesture_state", "id": gid, "active": True})
            return {"type": "ack", "cmd": kind, "ok": True, "id": gid}
        if kind == "stop_gesture":
            self.generator.set_gesture(None)
            self._emit({"type": "gesture_state", "id": None, "active": False})
            return {"type": "ack", "cmd": kind, "ok": True}
        if kind == "set_alpha":
            alpha = float(cmd.get("alpha", 0.5))
            if not 0.0 < alpha <= 1.0:
                return {"type": "ack", "cmd": kind, "ok": False,
                        "error": "alpha must be in (0, 1]"}
            self.engine.config.ema_alpha = alpha
            return {"type": "ack", "cmd": kind, "ok": True, "alpha": alpha}
        return {"type": "ack", "cmd": kind, "ok": False,
                "error": f"unknown command type {kind!r}"}


def run_demo(sim_clock: bool = False, duration: float = 30.0, seed: int = 0,
             bridge_port: int = DEFAULT_BRIDGE_PORT,
             model_path: str | None = None, controller: DemoController | None = None) -> int:
    from .bridge import BridgeServer

    demo = controller or DemoController(seed=seed, model_path=model_path,
                                        async_ticks=not sim_clock)
    bridge = BridgeServer(bridge_port, demo.handle_command)
    demo.bridge = bridge
    bridge.start()
    print(f"bridge: ws://127.0.0.1:{bridge.port}/ws "
          f"({'simulated' if sim_clock else 'wall'} clock)")
    demo.generator.set_gesture(0)
    blocks = int(duration / BLOCK_S) if duration else None
    n = 0
    next_wall = time.monotonic()
    try:
        while blocks is None or n < blocks:
            demo.step_block()
            n += 1
            if not sim_clock:
                next_wall += BLOCK_S
                delay = next_wall - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
    except KeyboardInterrupt:
        pass
    finally:
        stats = demo.engine.latency_report()
        print(f"demo done: {n} blocks, {stats.frames_emitted} frames, "
              f"model v{stats.model_version}, "
              f"{bridge.events_sent} events")
        bridge.stop()
    return 0
