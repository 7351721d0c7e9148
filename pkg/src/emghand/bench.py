"""Benchmarks: per-kernel numba-vs-numpy timings and engine tick latency."""

from __future__ import annotations

import time

import numpy as np

from . import kernels
from .handformer import HandFormer, ModelConfig
from .realtime import EngineConfig, RealtimeEngine


def _time(fn, *args, repeat=30):
    fn(*args)
    best = float("inf")
    for _ in range(3):
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / repeat)
    return best * 1e3


def bench_kernels(repeat: int = 30) -> str:
    """Time every kernel on each available backend at training shapes."""
    rng = np.random.default_rng(0)
    x_sm = rng.standard_normal((4096, 256)).astype(np.float32)
    p_sm = kernels.softmax_rows_np(x_sm)
    x_ln = rng.standard_normal((1024, 64)).astype(np.float32)
    g = np.ones(64, np.float32)
    b = np.zeros(64, np.float32)
    _, xhat, inv = kernels.layernorm_np(x_ln, g, b)
    x_ge = rng.standard_normal((1024, 256)).astype(np.float32)
    w = rng.standard_normal(440_000).astype(np.float32)
    grad = rng.standard_normal(440_000).astype(np.float32)
    src = rng.standard_normal((1300, 20))
    times = np.linspace(0.0, 30.0, 2000)

    cases = {
        "softmax_rows (4096x256)": lambda f: f(x_sm.copy()),
        "softmax_grad (4096x256)": lambda f: f(p_sm, x_sm),
        "layernorm (1024x64)": lambda f: f(x_ln, g, b, 1e-5),
        "layernorm_grad (1024x64)": lambda f: f(x_ln, xhat, inv, g),
        "gelu (1024x256)": lambda f: f(x_ge),
        "gelu_grad (1024x256)": lambda f: f(x_ge, x_ge),
        "adam_step (440k)": lambda f: f(w.copy(), grad, np.zeros_like(w),
                                        np.zeros_like(w), 3e-4, 0.9, 0.999,
                                        1e-8, 0.1, 0.01),
        "interp_rows (1300x20 -> 2000)": lambda f: f(src, 0.0, 40.0, times),
    }
    names = [n for n in ("numpy", "numba") if n in kernels.IMPLS]
    for name in names:
        kernels.warmup(kernels.IMPLS[name])
    lines = [f"kernel backends (active mode: {kernels.backend()})",
             f"{'kernel':34s}" + "".join(f"{n:>12s}" for n in names)]
    for case, runner in cases.items():
        key = case.split(" ")[0]
        row = f"{case:34s}"
        for name in names:
            impl = kernels.IMPLS[name][key]
            row += f"{_time(lambda: runner(impl), repeat=repeat):10.3f} ms"
        lines.append(row)
    return "\n".join(lines)


def bench_engine(ticks: int, seed: int = 0) -> str:
    """Measure per-tick inference latency at the default model config."""
    kernels.warmup()
    model = HandFormer(ModelConfig(seed=seed))
    engine = RealtimeEngine(model, EngineConfig())
    rng = np.random.default_rng(seed)
    n = 256 + ticks * 8
    samples = rng.uniform(-120, 120, (n, 8)).astype(np.float32)
    t0 = time.perf_counter()
    for start in range(0, n, 8):
        engine.ingest(start / 200.0, samples[start:start + 8])
    wall = time.perf_counter() - t0
    stats = engine.latency_report()
    s = stats.summary()
    return ("engine tick latency over "
            f"{stats.ticks} ticks ({wall:.2f}s wall):\n"
            f"  p50 {s['p50_tick_ms']:.2f} ms  p99 {s['p99_tick_ms']:.2f} ms"
            f"  max {s['max_tick_ms']:.2f} ms"
            f"  deadline {s['output_period_ms']:.0f} ms"
            f"  violations {s['deadline_violations']}")
