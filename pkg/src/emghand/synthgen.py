"""Seeded synthetic generator for paired pose + EMG sessions.

Stands in for the motion-capture rig: gestures are procedural joint-angle
trajectories (static ramp-and-hold or periodic sums of sinusoids), and
EMG is amplitude-modulated band-limited noise driven by a fixed random
linear muscle model, so the pose->EMG ground truth is known exactly and
end-to-end decoding quality can be scored against it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .preprocess import (ANGLE_HI, ANGLE_LO, EMG_HI, EMG_LO, EMG_RATE,
                         N_ANGLES, N_JOINTS, POSE_RATE, quat_about_x,
                         quat_about_z, quat_mul)
from .streams import AlignedTrack

N_GESTURES = 72
N_DYNAMIC = 45   # gesture ids 0..44
N_STATIC = 27    # gesture ids 45..71

STATIC_RAMP_S = 0.5
GAP_S = 1.0
GAP_BLEND_S = 0.25
DEFAULT_GESTURE_S = 60.0

UPSAMPLE = int(EMG_RATE / POSE_RATE)  # 5

# transitions whip the joints around; activations above this velocity
# are clipped so one boundary frame cannot saturate the whole range
MAX_JOINT_VEL = 12.0  # rad/s


class SynthError(Exception):
    pass


@dataclass(frozen=True)
class GestureSpec:
    gesture_id: int
    kind: str          # "static" | "dynamic"
    param_seed: int

    def __post_init__(self):
        if not 0 <= self.gesture_id < N_GESTURES:
            raise SynthError(f"unknown gesture_id {self.gesture_id}")
        if self.kind not in ("static", "dynamic"):
            raise SynthError(f"unknown gesture kind {self.kind!r}")


def gesture_spec(gesture_id: int) -> GestureSpec:
    """Standard gesture table: ids 0..44 dynamic, 45..71 static."""
    kind = "dynamic" if gesture_id < N_DYNAMIC else "static"
    return GestureSpec(gesture_id, kind, 1000 + gesture_id)


@dataclass
class GestureScript:
    """Ordered (spec, duration seconds) entries; durations must be > 0."""

    entries: list = field(default_factory=list)

    def __post_init__(self):
        for _, dur in self.entries:
            if dur <= 0:
                raise SynthError("gesture durations must be positive")
        if not self.entries:
            raise SynthError("script must not be empty")


def standard_script(duration: float = DEFAULT_GESTURE_S) -> GestureScript:
    return GestureScript([(gesture_spec(i), duration)
                          for i in range(N_GESTURES)])


@dataclass
class MuscleModel:
    """Linear activation model: a = max(0, W_pos (theta - rest) + W_vel dtheta)."""

    W_pos: np.ndarray      # (8, 20)
    W_vel: np.ndarray      # (8, 20)
    rest_pose: np.ndarray  # (20,)
    noise_floor: float = 2.0
    bandwidth: float = 60.0

    def __post_init__(self):
        self.W_pos = np.asarray(self.W_pos, dtype=np.float64)
        self.W_vel = np.asarray(self.W_vel, dtype=np.float64)
        self.rest_pose = np.asarray(self.rest_pose, dtype=np.float64)
        if self.W_pos.shape != (8, N_ANGLES) or self.W_vel.shape != (8, N_ANGLES):
            raise SynthError("mixing matrices must be (8, 20)")
        if self.rest_pose.shape != (N_ANGLES,):
            raise SynthError("rest_pose must be (20,)")
        if not (np.isfinite(self.W_pos).all() and np.isfinite(self.W_vel).all()
                and np.isfinite(self.rest_pose).all()):
            raise SynthError("muscle model entries must be finite")
        if self.noise_floor < 0:
            raise SynthError("noise_floor must be >= 0")

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.W_pos, self.W_vel, self.rest_pose):
            h.update(arr.tobytes())
        h.update(np.float64(self.noise_floor).tobytes())
        h.update(np.float64(self.bandwidth).tobytes())
        return h.hexdigest()[:16]


def default_muscle_model(seed: int = 0, scale: float = 10.0) -> MuscleModel:
    rng = np.random.default_rng(seed)
    return MuscleModel(
        W_pos=rng.standard_normal((8, N_ANGLES)) * scale,
        W_vel=rng.standard_normal((8, N_ANGLES)) * scale,
        rest_pose=np.zeros(N_ANGLES))


@dataclass
class Annotation:
    gesture_id: int
    t_start: float
    t_end: float


@dataclass
class SessionRecording:
    """A synchronized recording with known generator ground truth."""

    emg: AlignedTrack         # 200 Hz, 8 channels, float32
    pose_quat: AlignedTrack   # 40 Hz, 84 channels (21 quats), float64
    annotations: list
    seed: int
    model_hash: str = ""

    @property
    def duration(self) -> float:
        return self.emg.duration


# ---------------------------------------------------------------------------
# gesture trajectories
# ---------------------------------------------------------------------------

def _static_params(rng):
    return rng.uniform(ANGLE_LO + 0.06, ANGLE_HI - 0.22, size=N_ANGLES)


def _dynamic_params(rng):
    period = rng.uniform(1.0, 4.0)
    lo_c = ANGLE_LO + 0.25 * (ANGLE_HI - ANGLE_LO)
    hi_c = ANGLE_LO + 0.75 * (ANGLE_HI - ANGLE_LO)
    center = rng.uniform(lo_c, hi_c, size=N_ANGLES)
    n_harm = rng.integers(1, 4, size=N_ANGLES)
    raw = rng.uniform(0.3, 1.0, size=(N_ANGLES, 3))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(N_ANGLES, 3))
    margin = np.minimum(center - ANGLE_LO, ANGLE_HI - center)
    total = rng.uniform(0.5, 0.9, size=N_ANGLES) * margin
    harm_mask = np.arange(3)[None, :] < n_harm[:, None]
    raw = raw * harm_mask
    amp = raw * (total / np.maximum(raw.sum(axis=1), 1e-12))[:, None]
    return period, center, amp, phase


def gesture_angles_at(spec: GestureSpec, times) -> np.ndarray:
    """Evaluate the gesture's joint angles at arbitrary times (seconds).

    Deterministic in the spec: statics ramp from rest to a held target
    over 0.5 s (smoothstep), dynamics are per-joint sums of 1-3 harmonics
    of one base period in [1, 4] s, everything inside anatomical bounds.
    """
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    rng = np.random.default_rng(spec.param_seed)
    if spec.kind == "static":
        target = _static_params(rng)
        u = np.clip(times / STATIC_RAMP_S, 0.0, 1.0)
        ramp = u * u * (3.0 - 2.0 * u)
        return ramp[:, None] * target[None, :]
    period, center, amp, phase = _dynamic_params(rng)
    w = 2.0 * np.pi / period
    k = np.arange(1, 4)
    # (t, angle, harmonic)
    arg = w * times[:, None, None] * k[None, None, :] + phase[None, :, :]
    return center[None, :] + (amp[None, :, :] * np.sin(arg)).sum(axis=2)


def gesture_period(spec: GestureSpec) -> float:
    """Base period of a dynamic gesture (error for statics)."""
    if spec.kind != "dynamic":
        raise SynthError("static gestures are aperiodic")
    return _dynamic_params(np.random.default_rng(spec.param_seed))[0]


def gesture_trajectory(spec: GestureSpec, duration: float,
                       rate: float = POSE_RATE) -> np.ndarray:
    """Sample one gesture on a uniform grid: (round(duration*rate), 20)."""
    if duration <= 0:
        raise SynthError("duration must be positive")
    n = int(round(duration * rate))
    return gesture_angles_at(spec, np.arange(n) / rate)


# ---------------------------------------------------------------------------
# EMG synthesis
# ---------------------------------------------------------------------------

def _bandlimited_noise(rng, n: int, channels: int, rate: float,
                       f_lo: float, f_hi: float) -> np.ndarray:
    """Unit-RMS zero-mean noise restricted to [f_lo, f_hi] Hz per channel."""
    white = rng.standard_normal((n, channels))
    spec = np.fft.rfft(white, axis=0)
    freqs = np.fft.rfftfreq(n, d=1.0 / rate)
    keep = (freqs >= f_lo) & (freqs <= f_hi)
    spec[~keep] = 0.0
    out = np.fft.irfft(spec, n=n, axis=0)
    rms = np.sqrt(np.mean(out * out, axis=0, keepdims=True))
    return out / np.maximum(rms, 1e-12)


def activation(pose_angles: np.ndarray, model: MuscleModel,
               rate: float = POSE_RATE) -> np.ndarray:
    """Rectified per-channel muscle drive from a (n, 20) angle track."""
    theta = np.asarray(pose_angles, dtype=np.float64)
    if theta.ndim != 2 or theta.shape[1] != N_ANGLES:
        raise SynthError(f"pose track must be (n, {N_ANGLES})")
    if not np.isfinite(theta).all():
        raise SynthError("pose angles must be finite")
    vel = np.gradient(theta, axis=0) * rate if theta.shape[0] > 1 \
        else np.zeros_like(theta)
    vel = np.clip(vel, -MAX_JOINT_VEL, MAX_JOINT_VEL)
    drive = (theta - model.rest_pose) @ model.W_pos.T + vel @ model.W_vel.T
    return np.maximum(drive, 0.0)


def synth_emg(pose_track: AlignedTrack, model: MuscleModel,
              seed: int) -> AlignedTrack:
    """Render 8-channel EMG at 200 Hz from a 40 Hz joint-angle track.

    The rectified activation envelope is upsampled and multiplies a
    band-limited unit-RMS noise carrier; an independent carrier scaled by
    ``noise_floor`` is added, and the result is clipped to the 8-bit
    sensor range [-128, 127]. Deterministic in (track, model, seed).
    """
    act = activation(pose_track.values, model, pose_track.rate)
    n = act.shape[0]
    m = (n - 1) * UPSAMPLE + 1 if n > 1 else 1
    times = pose_track.t0 + np.arange(m) / EMG_RATE
    env = kernels.interp_rows(np.ascontiguousarray(act), pose_track.t0,
                              pose_track.rate, times)
    rng = np.random.default_rng(seed)
    carrier = _bandlimited_noise(rng, m, 8, EMG_RATE, 8.0, model.bandwidth)
    floor = _bandlimited_noise(rng, m, 8, EMG_RATE, 8.0, model.bandwidth)
    emg = env * carrier + model.noise_floor * floor
    emg = np.clip(emg, EMG_LO, EMG_HI).astype(np.float32)
    return AlignedTrack(t0=pose_track.t0, rate=EMG_RATE, values=emg)


# ---------------------------------------------------------------------------
# angles -> quaternions (inverse of preprocess.quat_to_angles)
# ---------------------------------------------------------------------------

def angles_to_quats(angles) -> np.ndarray:
    """Build the 21 palm-relative joint quaternions from 20 angles.

    Per finger: MCP = Rz(abduction) * Rx(flexion); PIP and DIP compose
    further X twists onto their parent; the fingertip repeats DIP. The
    palm entry is the identity.
    """
    angles = np.asarray(angles, dtype=np.float64)
    lead = angles.shape[:-1]
    if angles.shape[-1] != N_ANGLES:
        raise SynthError(f"expected (..., {N_ANGLES}) angles")
    out = np.zeros(lead + (N_JOINTS, 4))
    out[..., 0, 0] = 1.0
    for f in range(5):
        bf = angles[..., 4 * f + 0]
        ba = angles[..., 4 * f + 1]
        mf = angles[..., 4 * f + 2]
        tf = angles[..., 4 * f + 3]
        q_mcp = quat_mul(quat_about_z(ba), quat_about_x(bf))
        q_pip = quat_mul(q_mcp, quat_about_x(mf))
        q_dip = quat_mul(q_pip, quat_about_x(tf))
        base = 1 + 4 * f
        out[..., base + 0, :] = q_mcp
        out[..., base + 1, :] = q_pip
        out[..., base + 2, :] = q_dip
        out[..., base + 3, :] = q_dip
    return out


# ---------------------------------------------------------------------------
# full sessions
# ---------------------------------------------------------------------------

def _gap_frames(prev_end: np.ndarray, next_start: np.ndarray) -> np.ndarray:
    """Rest-pose gap easing out of the previous pose and into the next."""
    n = int(GAP_S * POSE_RATE)
    blend = int(GAP_BLEND_S * POSE_RATE)
    gap = np.zeros((n, N_ANGLES))
    k = np.arange(n)
    fall = 0.5 * (1.0 + np.cos(np.pi * np.minimum(k / blend, 1.0)))
    rise_u = np.clip((k - (n - 1 - blend)) / blend, 0.0, 1.0)
    rise = 0.5 * (1.0 - np.cos(np.pi * rise_u))
    gap += fall[:, None] * prev_end[None, :]
    gap += rise[:, None] * next_start[None, :]
    return gap


def generate_session(script: GestureScript, model: MuscleModel,
                     seed: int) -> SessionRecording:
    """Concatenate scripted gestures (1 s rest gaps between them), encode
    the pose as quaternions and synthesize matching EMG."""
    seq = np.random.SeedSequence(seed)
    emg_seed = int(seq.spawn(1)[0].generate_state(1)[0])

    segments = []
    annotations = []
    cursor = 0
    for i, (spec, dur) in enumerate(script.entries):
        traj = gesture_trajectory(spec, dur, POSE_RATE)
        if i > 0:
            prev = segments[-1][-1]
            gap = _gap_frames(prev, traj[0])
            segments.append(gap)
            cursor += gap.shape[0]
        t_start = cursor / POSE_RATE
        segments.append(traj)
        cursor += traj.shape[0]
        annotations.append(Annotation(spec.gesture_id, t_start,
                                      cursor / POSE_RATE))
    angles = np.concatenate(segments, axis=0)
    quats = angles_to_quats(angles)
    pose_track = AlignedTrack(t0=0.0, rate=POSE_RATE,
                              values=quats.reshape(angles.shape[0],
                                                   N_JOINTS * 4))
    angle_track = AlignedTrack(t0=0.0, rate=POSE_RATE, values=angles)
    emg_track = synth_emg(angle_track, model, emg_seed)
    return SessionRecording(emg=emg_track, pose_quat=pose_track,
                            annotations=annotations, seed=seed,
                            model_hash=model.content_hash())
