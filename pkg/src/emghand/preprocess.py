"""Signal conditioning and pose encoding between raw streams and model IO.

EMG: fixed-bound min-max scaling to [-1, 1] and left/right electrode
mirroring. Pose: palm-relative quaternion normalization and extraction of
4 angles per finger (base flexion, base abduction, mid and tip flexion)
via twist-swing decomposition, plus resampling and window pairing.

Skeleton layout: 21 joints ordered palm first, then per finger
(thumb, index, middle, ring, little) a 4-joint chain MCP, PIP, DIP,
fingertip. Stored quaternions are palm-relative accumulated orientations
(MCP composed into PIP composed into DIP; the fingertip carries no extra
rotation). Flexion twists about the local X axis, abduction swings about
local Z at the base joint only; flexion is positive toward the palm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

EMG_LO = -128.0
EMG_HI = 127.0

FINGERS = ("thumb", "index", "middle", "ring", "little")
N_JOINTS = 21   # palm + 5 fingers x 4 chain joints
N_ANGLES = 20   # 4 per finger

ANGLE_LO = -0.26
ANGLE_HI = 1.92

WINDOW_LEN = 256
EMG_RATE = 200.0
POSE_RATE = 40.0
FRAME_RATE = 25.0
TARGET_FRAMES = 32

MIRROR_PERM = np.array([(8 - i) % 8 for i in range(8)])


class PreprocessError(Exception):
    pass


class SessionTooShort(PreprocessError):
    pass


# ---------------------------------------------------------------------------
# scalar/EMG transforms
# ---------------------------------------------------------------------------

def minmax_normalize(raw, lo: float = EMG_LO, hi: float = EMG_HI):
    """Clip to [lo, hi] and affinely map onto [-1, 1]."""
    if lo >= hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    raw = np.asarray(raw)
    dtype = raw.dtype if raw.dtype.kind == "f" else np.dtype(np.float32)
    x = np.clip(raw.astype(dtype), lo, hi)
    return ((x - lo) * 2.0 / (hi - lo) - 1.0).astype(dtype)


def mirror_channels(emg):
    """Ring-reversal electrode permutation i -> (8 - i) mod 8; involution."""
    emg = np.asarray(emg)
    if emg.shape[0] != 8:
        raise ValueError(f"expected 8 channels first, got shape {emg.shape}")
    return emg[MIRROR_PERM]


# ---------------------------------------------------------------------------
# quaternion primitives (w, x, y, z; vectorized over leading axes)
# ---------------------------------------------------------------------------

def quat_mul(a, b):
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conj(q):
    out = np.array(q, dtype=np.float64, copy=True)
    out[..., 1:] *= -1.0
    return out


def quat_normalize(q, min_norm: float = 1e-12):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if (n < min_norm).any():
        raise PreprocessError("near-zero-norm quaternion")
    return q / n


def quat_canonical(q):
    """Flip sign so w >= 0 (double-cover canonicalization)."""
    q = np.asarray(q, dtype=np.float64)
    return np.where(q[..., :1] < 0.0, -q, q)


def quat_about_x(angle):
    angle = np.asarray(angle, dtype=np.float64)
    half = 0.5 * angle
    out = np.zeros(angle.shape + (4,))
    out[..., 0] = np.cos(half)
    out[..., 1] = np.sin(half)
    return out


def quat_about_z(angle):
    angle = np.asarray(angle, dtype=np.float64)
    half = 0.5 * angle
    out = np.zeros(angle.shape + (4,))
    out[..., 0] = np.cos(half)
    out[..., 3] = np.sin(half)
    return out


def twist_about_x(q):
    """Twist angle about local X; 0 in the degenerate (orthogonal) case."""
    q = quat_canonical(q)
    w, x = q[..., 0], q[..., 1]
    n = np.hypot(w, x)
    ang = 2.0 * np.arctan2(x, w)
    return np.where(n < 1e-12, 0.0, ang)


# ---------------------------------------------------------------------------
# pose transforms
# ---------------------------------------------------------------------------

def relative_to_palm(quats):
    """Compose every joint with the conjugate palm rotation.

    Input (..., 21, 4) world quaternions (unit within ~1e-3; re-normalized
    on entry). The palm entry becomes the identity; the map is idempotent.
    """
    quats = np.asarray(quats, dtype=np.float64)
    if quats.shape[-2:] != (N_JOINTS, 4):
        raise ValueError(f"expected (..., {N_JOINTS}, 4), got {quats.shape}")
    q = quat_normalize(quats)
    palm_inv = quat_conj(q[..., 0:1, :])
    return quat_mul(palm_inv, q)


def quat_to_angles(pose):
    """Extract the 20 joint angles from palm-relative quaternions.

    Per finger, consecutive relative rotations along the chain are
    decomposed: the base (MCP) yields flexion (twist about X) and
    abduction (the remaining swing's Z rotation); PIP and DIP yield one
    flexion each. Angle order per finger: [base-flex, base-abd, mid-flex,
    tip-flex].
    """
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape[-2:] != (N_JOINTS, 4):
        raise ValueError(f"expected (..., {N_JOINTS}, 4), got {pose.shape}")
    out = np.empty(pose.shape[:-2] + (N_ANGLES,))
    for f in range(5):
        base = 1 + 4 * f
        q_mcp = quat_canonical(pose[..., base, :])
        q_pip = pose[..., base + 1, :]
        q_dip = pose[..., base + 2, :]
        r_pip = quat_canonical(quat_mul(quat_conj(q_mcp), q_pip))
        r_dip = quat_canonical(quat_mul(quat_conj(quat_canonical(q_pip)),
                                        q_dip))
        flex = twist_about_x(q_mcp)
        swing = quat_canonical(quat_mul(q_mcp, quat_conj(quat_about_x(flex))))
        abd = 2.0 * np.arctan2(swing[..., 3], swing[..., 0])
        out[..., 4 * f + 0] = flex
        out[..., 4 * f + 1] = abd
        out[..., 4 * f + 2] = twist_about_x(r_pip)
        out[..., 4 * f + 3] = twist_about_x(r_dip)
    return out


def resample_angles(track, src_rate: float, dst_rate: float):
    """Per-angle linear interpolation onto the dst grid over the same span."""
    track = np.asarray(track)
    if track.ndim != 2 or track.shape[0] < 2:
        raise ValueError("track must be (n >= 2, angles)")
    if src_rate <= 0 or dst_rate <= 0:
        raise ValueError("rates must be positive")
    span = (track.shape[0] - 1) / src_rate
    m = int(np.floor(span * dst_rate + 1e-9)) + 1
    times = np.arange(m) / dst_rate
    return kernels.interp_rows(np.ascontiguousarray(track), 0.0, src_rate,
                               times)


# ---------------------------------------------------------------------------
# window pairing
# ---------------------------------------------------------------------------

@dataclass
class WindowPair:
    """One training example: normalized EMG window and its pose targets.

    ``target`` holds 32 frames at 25 Hz whose last frame coincides with the
    window end; both cover the same 1.28 s interval.
    """

    emg: np.ndarray      # (8, 256) float32 in [-1, 1]
    target: np.ndarray   # (32, 20) float32 radians
    t_end: float

    def __post_init__(self):
        if self.emg.shape != (8, WINDOW_LEN):
            raise ValueError(f"emg must be (8, {WINDOW_LEN})")
        if self.target.shape != (TARGET_FRAMES, N_ANGLES):
            raise ValueError(f"target must be ({TARGET_FRAMES}, {N_ANGLES})")


def session_angles(session):
    """Generator ground truth recovered from the stored quaternion track."""
    quats = session.pose_quat.values.reshape(-1, N_JOINTS, 4)
    return quat_to_angles(relative_to_palm(quats))


def make_windows(session, stride: int = 8) -> list[WindowPair]:
    """Slice a session into (EMG window, 32-frame target) training pairs.

    Windows end at EMG samples 255, 255+stride, ... so the count is
    floor((n_emg - 256) / stride) + 1. Targets are the palm-relative
    angles interpolated at the 32 window-aligned 25 Hz tick times.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    emg = session.emg
    n_emg = emg.values.shape[0]
    if n_emg < WINDOW_LEN:
        raise SessionTooShort(
            f"need >= {WINDOW_LEN} EMG samples (1.28 s), have {n_emg}")
    norm = minmax_normalize(emg.values.astype(np.float32))
    angles = session_angles(session)

    ends = np.arange(WINDOW_LEN - 1, n_emg, stride)
    t_ends = emg.t0 + ends / emg.rate
    offs = (np.arange(TARGET_FRAMES) - (TARGET_FRAMES - 1)) / FRAME_RATE
    times = (t_ends[:, None] + offs[None, :]).ravel()
    targets = kernels.interp_rows(
        np.ascontiguousarray(angles), session.pose_quat.t0,
        session.pose_quat.rate, times) \
        .reshape(len(ends), TARGET_FRAMES, N_ANGLES).astype(np.float32)

    pairs = []
    for i, end in enumerate(ends):
        win = norm[end - WINDOW_LEN + 1:end + 1].T.copy()
        pairs.append(WindowPair(win, targets[i], float(t_ends[i])))
    return pairs
