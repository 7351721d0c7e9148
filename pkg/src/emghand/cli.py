"""Operator command line: synth / pretrain / train / eval / serve-adapt /
run-rt / bench / demo.

Every command is deterministic under a fixed --seed (bench wall timings
excepted) and none mutates its input files. Exit codes: 0 success,
2 usage error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import kernels, sessionio, wire
from .adapt import AdaptationPolicy, AdaptServer, AdaptService
from .evalkit import OraclePredictor, evaluate_session
from .handformer import (HandFormer, ModelConfig, pretrain_mae,
                         train_supervised)
from .preprocess import make_windows
from .realtime import EngineConfig, RealtimeEngine
from .synthgen import (GestureScript, default_muscle_model, generate_session,
                       gesture_spec, standard_script)

USAGE_EXIT = 2
RUNTIME_EXIT = 3


def _load_config(path):
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _model_config(cfg: dict, seed: int | None = None) -> ModelConfig:
    body = dict(cfg.get("model", {}))
    if seed is not None:
        body["seed"] = seed
    return ModelConfig(**body)


def _parse_gestures(spec: str):
    if "," in spec:
        ids = [int(s) for s in spec.split(",") if s.strip()]
    else:
        ids = list(range(int(spec)))
    return [gesture_spec(i) for i in ids]


def _load_sessions(paths):
    return [sessionio.read_session(p) for p in paths]


def _windows_from_sessions(paths, stride):
    pairs = []
    for session in _load_sessions(paths):
        pairs.extend(make_windows(session, stride=stride))
    if not pairs:
        raise RuntimeError("no training windows produced")
    wins = np.stack([p.emg for p in pairs])
    tgts = np.stack([p.target for p in pairs])
    return wins, tgts


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    if args.duration <= 0:
        raise RuntimeError("--duration must be positive")
    specs = _parse_gestures(args.gestures)
    if specs:
        script = GestureScript([(s, args.duration) for s in specs])
    else:
        script = standard_script(args.duration)
    model = default_muscle_model(args.model_seed)
    session = generate_session(script, model, seed=args.seed)
    sessionio.write_session(session, args.out)
    print(f"wrote {args.out}: {session.duration:.2f}s, "
          f"{len(session.annotations)} gestures, seed={args.seed}")
    return 0


def cmd_pretrain(args):
    cfg = _load_config(args.config)
    wins, _ = _windows_from_sessions(args.session, args.stride)
    model = HandFormer(_model_config(cfg, args.seed)) if not args.model \
        else HandFormer.load(args.model)
    rng = np.random.default_rng(args.seed)
    kernels.warmup()
    losses = pretrain_mae(model, wins, steps=args.steps,
                          batch_size=args.batch, rng=rng,
                          fixed_batch=args.fixed_batch)
    head = float(np.mean(losses[:max(1, args.steps // 20)]))
    tail = float(np.mean(losses[-max(1, args.steps // 20):]))
    print(f"mae pretrain: {args.steps} steps on {wins.shape[0]} windows, "
          f"loss {head:.4f} -> {tail:.4f}")
    if args.out:
        model.save(args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_train(args):
    cfg = _load_config(args.config)
    wins, tgts = _windows_from_sessions(args.session, args.stride)
    model = HandFormer.load(args.model) if args.model \
        else HandFormer(_model_config(cfg, args.seed))
    rng = np.random.default_rng(args.seed)
    kernels.warmup()
    losses = train_supervised(model, wins, tgts, steps=args.steps,
                              batch_size=args.batch, rng=rng)
    head = float(np.mean(losses[:max(1, args.steps // 20)]))
    tail = float(np.mean(losses[-max(1, args.steps // 20):]))
    print(f"supervised: {args.steps} steps on {wins.shape[0]} windows, "
          f"L1 {head:.4f} -> {tail:.4f} rad")
    if args.out:
        model.save(args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_eval(args):
    sessions = _load_sessions(args.session)
    reports = []
    for path, session in zip(args.session, sessions):
        if args.oracle:
            predictor = OraclePredictor(make_windows(session, args.stride))
        else:
            predictor = HandFormer.load(args.model)
        report = evaluate_session(predictor, session, stride=args.stride,
                                  all_frames=args.all_frames)
        print(f"== {path}")
        print(report.table())
        reports.append(report.to_dict())
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(reports if len(reports) > 1 else reports[0], fh,
                      indent=2, sort_keys=True)
        print(f"wrote {args.out}")
    return 0


def cmd_serve_adapt(args):
    model = HandFormer.load(args.model) if args.model \
        else HandFormer(_model_config(_load_config(args.config), args.seed))
    policy = AdaptationPolicy(**_load_config(args.config).get("policy", {}))
    server = AdaptServer(model, policy, seed=args.seed,
                         snapshot_dir=args.snapshot_dir)
    service = AdaptService(server, port=args.port)
    service.start()
    print(f"adaptation service on port {service.port} "
          f"(tick every {policy.tick_interval}s)")
    import threading
    stop = threading.Event()
    try:
        server.run_wall(stop)
    except KeyboardInterrupt:
        print("stopping")
    finally:
        stop.set()
        service.stop()
    return 0


def cmd_run_rt(args):
    model = HandFormer.load(args.model)
    engine_cfg = EngineConfig(**_load_config(args.config).get("engine", {}))
    if args.alpha is not None:
        engine_cfg.ema_alpha = args.alpha
    engine = RealtimeEngine(model, engine_cfg)
    kernels.warmup()
    if not args.session:
        if not args.port:
            raise RuntimeError("run-rt needs --session (replay) or --port")
        from .realtime import RealtimeService
        service = RealtimeService(engine, port=args.port)
        service.start()
        print(f"realtime engine listening on port {service.port} "
              f"(EMG chunks in, pose chunks out)")
        try:
            import threading
            threading.Event().wait()
        except KeyboardInterrupt:
            pass
        finally:
            service.stop()
        return 0
    session = sessionio.read_session(args.session[0])
    emg = session.emg
    frames = []
    chunk = 8
    for start in range(0, emg.values.shape[0], chunk):
        part = emg.values[start:start + chunk]
        frames.extend(engine.ingest(emg.t0 + start / emg.rate, part))
    stats = engine.latency_report()
    print(json.dumps(stats.summary(), indent=2, sort_keys=True))
    if args.out:
        np.savez(args.out,
                 t=np.array([f.t for f in frames]),
                 angles=np.stack([f.angles for f in frames]),
                 version=np.array([f.model_version for f in frames]))
        print(f"wrote {args.out} ({len(frames)} frames)")
    return 0


def cmd_bench(args):
    from .bench import bench_kernels, bench_engine
    if args.kernels or not args.ticks:
        print(bench_kernels())
    if args.ticks:
        print(bench_engine(args.ticks, seed=args.seed))
    return 0


def cmd_demo(args):
    from .demo import run_demo
    return run_demo(sim_clock=args.sim_clock, duration=args.duration,
                    seed=args.seed, bridge_port=args.port,
                    model_path=args.model)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="emghand",
        description="Desk-scale sEMG-to-hand-motion pipeline")
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p, model=False, out=False, sessions=False, steps=None):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=0)
        if model:
            p.add_argument("--model", default=None, help="weights file")
        if out:
            p.add_argument("--out", default=None, help="output path")
        if sessions:
            p.add_argument("--session", nargs="+", required=True,
                           help="session file(s)")
            p.add_argument("--stride", type=int, default=8)
        if steps is not None:
            p.add_argument("--steps", type=int, default=steps)

    p = sub.add_parser("synth", help="generate a synthetic session file")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--gestures", default="72",
                   help="gesture count or comma-separated ids")
    p.add_argument("--duration", type=float, default=60.0,
                   help="seconds per gesture")
    p.add_argument("--model-seed", type=int, default=0,
                   help="muscle model seed")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("pretrain", help="masked-autoencoder pretraining")
    common(p, model=True, out=True, sessions=True, steps=1000)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--fixed-batch", action="store_true",
                   help="train every step on one fixed batch")
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("train", help="supervised fine-tuning")
    common(p, model=True, out=True, sessions=True, steps=3000)
    p.add_argument("--batch", type=int, default=4)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="offline evaluation report")
    common(p, model=True, out=True, sessions=True)
    p.set_defaults(stride=16)
    p.add_argument("--oracle", action="store_true",
                   help="score the ground-truth oracle instead of a model")
    p.add_argument("--all-frames", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("serve-adapt", help="run the adaptation service")
    common(p, model=True)
    p.add_argument("--port", type=int, default=wire.DEFAULT_ADAPT_PORT)
    p.add_argument("--snapshot-dir", default="snapshots")
    p.set_defaults(fn=cmd_serve_adapt)

    p = sub.add_parser("run-rt", help="realtime engine: session replay or TCP")
    common(p, model=True, out=True)
    p.add_argument("--session", nargs="+", default=None)
    p.add_argument("--port", type=int, default=0,
                   help="serve the wire protocol instead of replaying")
    p.add_argument("--alpha", type=float, default=None, help="EMA alpha")
    p.set_defaults(fn=cmd_run_rt)

    p = sub.add_parser("bench", help="kernel and engine benchmarks")
    common(p)
    p.add_argument("--kernels", action="store_true")
    p.add_argument("--ticks", type=int, default=0,
                   help="engine tick benchmark length")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("demo", help="synth feed + engine + adaptation + bridge")
    common(p, model=True)
    p.add_argument("--sim-clock", action="store_true")
    p.add_argument("--duration", type=float, default=30.0)
    p.add_argument("--port", type=int, default=wire.DEFAULT_BRIDGE_PORT)
    p.set_defaults(fn=cmd_demo)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except KeyboardInterrupt:
        return RUNTIME_EXIT
    except Exception as exc:  # noqa: BLE001 - single CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
