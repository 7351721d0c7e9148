"""Offline evaluation: per-joint correlation and angular error in degrees.

Scoring follows deployment semantics: per window, the last predicted
frame (the one the realtime engine would act on) is compared against the
target's last frame; an all-frames mode exists for diagnostics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .preprocess import N_ANGLES, make_windows

DEGENERACY_VAR_EPS = 1e-24


@dataclass
class EvalReport:
    per_dof_correlation: np.ndarray   # (20,)
    per_dof_error_deg: np.ndarray     # (20,)
    mean_correlation: float
    mean_error_deg: float
    pooled_correlation: float
    degenerate: np.ndarray            # (20,) bool, zero-variance flags
    window_count: int
    model_version: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_dof_correlation": [float(v) for v in self.per_dof_correlation],
            "per_dof_error_deg": [float(v) for v in self.per_dof_error_deg],
            "mean_correlation": float(self.mean_correlation),
            "mean_error_deg": float(self.mean_error_deg),
            "pooled_correlation": float(self.pooled_correlation),
            "degenerate": [bool(v) for v in self.degenerate],
            "window_count": int(self.window_count),
            "model_version": int(self.model_version),
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def table(self) -> str:
        lines = ["DOF  corr    err(deg)",
                 "---  ------  --------"]
        for i in range(N_ANGLES):
            flag = "*" if self.degenerate[i] else " "
            lines.append(f"{i:3d}  {self.per_dof_correlation[i]:+.3f}{flag} "
                         f"{self.per_dof_error_deg[i]:8.2f}")
        lines.append("---  ------  --------")
        lines.append(f"mean {self.mean_correlation:+.3f}  "
                     f"{self.mean_error_deg:8.2f}   "
                     f"({self.window_count} windows, "
                     f"model v{self.model_version})")
        return "\n".join(lines)


def pearson(x, y) -> float:
    """Pearson correlation; 0.0 for zero-variance input (degenerate)."""
    r, _ = pearson_flagged(x, y)
    return r


def pearson_flagged(x, y) -> tuple[float, bool]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.ndim != 1 or x.size < 2:
        raise ValueError("need 1-D series of length >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    vx = (xc * xc).sum()
    vy = (yc * yc).sum()
    if vx < DEGENERACY_VAR_EPS or vy < DEGENERACY_VAR_EPS:
        return 0.0, True
    return float((xc * yc).sum() / np.sqrt(vx * vy)), False


def mean_angular_error(pred, target) -> float:
    """Mean absolute difference over all entries, radians -> degrees."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.degrees(np.abs(pred - target).mean()))


def score_tracks(pred, target, model_version: int = 0,
                 extra: dict | None = None) -> EvalReport:
    """Aggregate the metrics over (n, 20) prediction/target tracks."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 2 \
            or pred.shape[1] != N_ANGLES:
        raise ValueError("expected matching (n, 20) tracks")
    corr = np.zeros(N_ANGLES)
    degen = np.zeros(N_ANGLES, dtype=bool)
    err = np.zeros(N_ANGLES)
    for j in range(N_ANGLES):
        corr[j], degen[j] = pearson_flagged(pred[:, j], target[:, j])
        err[j] = np.degrees(np.abs(pred[:, j] - target[:, j]).mean())
    pooled, _ = pearson_flagged(pred.ravel(), target.ravel())
    return EvalReport(
        per_dof_correlation=corr,
        per_dof_error_deg=err,
        mean_correlation=float(corr.mean()),
        mean_error_deg=float(err.mean()),
        pooled_correlation=pooled,
        degenerate=degen,
        window_count=pred.shape[0],
        model_version=model_version,
        extra=extra or {})


class OraclePredictor:
    """Ground-truth 'model': returns each window's target track verbatim."""

    version = -1

    def __init__(self, pairs):
        self._by_t = {p.t_end: p.target for p in pairs}

    def predict_pairs(self, pairs):
        return np.stack([self._by_t[p.t_end] for p in pairs])


def evaluate_session(model, session, stride: int = 16,
                     all_frames: bool = False) -> EvalReport:
    """Window a session, run the model, score against generator targets.

    ``model`` needs ``predict(windows) -> (B, 32, 20)`` (a HandFormer) or
    ``predict_pairs(pairs)`` (the oracle). Deterministic in its inputs.
    """
    pairs = make_windows(session, stride=stride)
    targets = np.stack([p.target for p in pairs])
    if hasattr(model, "predict_pairs"):
        preds = model.predict_pairs(pairs)
    else:
        windows = np.stack([p.emg for p in pairs])
        preds = model.predict(windows)
    version = getattr(model, "version", 0)
    if all_frames:
        p2 = preds.reshape(-1, N_ANGLES)
        t2 = targets.reshape(-1, N_ANGLES)
    else:
        p2 = preds[:, -1, :]
        t2 = targets[:, -1, :]
    return score_tracks(p2, t2, model_version=version,
                        extra={"stride": stride,
                               "all_frames": bool(all_frames)})
