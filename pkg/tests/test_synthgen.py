"""Generator guarantees: determinism, bounds, periodicity, EMG coupling."""

import numpy as np
import pytest

from emghand import preprocess as pp
from emghand import synthgen as sg
from emghand.evalkit import pearson
from emghand.streams import AlignedTrack


def test_standard_script_has_72_gestures_45_dynamic():
    script = sg.standard_script()
    assert len(script.entries) == 72
    kinds = [spec.kind for spec, _ in script.entries]
    assert kinds.count("dynamic") == 45
    assert kinds.count("static") == 27
    assert all(dur == 60.0 for _, dur in script.entries)


def test_unknown_gesture_id_rejected():
    with pytest.raises(sg.SynthError):
        sg.GestureSpec(72, "static", 0)


def test_static_gesture_constant_after_ramp():
    traj = sg.gesture_trajectory(sg.gesture_spec(50), 2.0, 40.0)
    after = traj[int(0.5 * 40) + 1:]
    np.testing.assert_array_equal(after, np.broadcast_to(after[0], after.shape))
    assert not np.allclose(after[0], 0.0)  # actually went somewhere


def test_dynamic_gesture_periodicity():
    spec = sg.gesture_spec(7)
    period = sg.gesture_period(spec)
    assert 1.0 <= period <= 4.0
    t = np.linspace(0.1, 6.0, 57)
    a = sg.gesture_angles_at(spec, t)
    b = sg.gesture_angles_at(spec, t + period)
    assert np.abs(a - b).max() < 1e-9


def test_trajectory_determinism():
    spec = sg.gesture_spec(12)
    a = sg.gesture_trajectory(spec, 3.0, 40.0)
    b = sg.gesture_trajectory(spec, 3.0, 40.0)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("gid", [0, 17, 44, 45, 60, 71])
def test_trajectories_respect_anatomical_bounds(gid):
    traj = sg.gesture_trajectory(sg.gesture_spec(gid), 5.0, 40.0)
    assert traj.min() >= pp.ANGLE_LO - 1e-12
    assert traj.max() <= pp.ANGLE_HI + 1e-12


def test_muscle_model_validation():
    with pytest.raises(sg.SynthError):
        sg.MuscleModel(np.zeros((8, 20)), np.zeros((8, 20)),
                       np.zeros(20), noise_floor=-1.0)
    with pytest.raises(sg.SynthError):
        sg.MuscleModel(np.zeros((4, 20)), np.zeros((8, 20)), np.zeros(20))


def _angle_track(angles, rate=40.0):
    return AlignedTrack(t0=0.0, rate=rate, values=np.asarray(angles))


def test_rest_pose_zero_noise_floor_gives_silent_emg():
    model = sg.MuscleModel(np.abs(np.random.default_rng(0).standard_normal((8, 20))),
                           np.zeros((8, 20)), np.zeros(20), noise_floor=0.0)
    track = _angle_track(np.zeros((80, 20)))
    emg = sg.synth_emg(track, model, seed=1)
    np.testing.assert_array_equal(emg.values, 0.0)


def test_doubling_w_pos_doubles_envelope_rms():
    rng = np.random.default_rng(1)
    w = rng.standard_normal((8, 20)) * 0.4  # small: no clipping
    base = sg.MuscleModel(w, np.zeros((8, 20)), np.zeros(20), noise_floor=0.0)
    dbl = sg.MuscleModel(2 * w, np.zeros((8, 20)), np.zeros(20),
                         noise_floor=0.0)
    angles = sg.gesture_trajectory(sg.gesture_spec(2), 10.0, 40.0)
    track = _angle_track(angles)
    e1 = sg.synth_emg(track, base, seed=7).values
    e2 = sg.synth_emg(track, dbl, seed=7).values
    rms1 = np.sqrt(np.mean(e1.astype(np.float64) ** 2))
    rms2 = np.sqrt(np.mean(e2.astype(np.float64) ** 2))
    assert rms2 / rms1 == pytest.approx(2.0, rel=0.05)


def test_synth_emg_deterministic_in_seed():
    model = sg.default_muscle_model(0)
    track = _angle_track(sg.gesture_trajectory(sg.gesture_spec(3), 2.0, 40.0))
    a = sg.synth_emg(track, model, seed=5).values
    b = sg.synth_emg(track, model, seed=5).values
    c = sg.synth_emg(track, model, seed=6).values
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_synth_emg_rate_and_span():
    track = _angle_track(sg.gesture_trajectory(sg.gesture_spec(1), 2.0, 40.0))
    emg = sg.synth_emg(track, sg.default_muscle_model(0), seed=0)
    assert emg.rate == 200.0
    assert emg.values.shape == ((track.n - 1) * 5 + 1, 8)
    assert emg.end == pytest.approx(track.end)
    assert emg.values.min() >= -128.0 and emg.values.max() <= 127.0


def _tiny_script():
    return sg.GestureScript([(sg.gesture_spec(0), 2.0),
                             (sg.gesture_spec(50), 2.0)])


def test_session_duration_and_annotations():
    session = sg.generate_session(_tiny_script(), sg.default_muscle_model(0),
                                  seed=9)
    assert session.pose_quat.duration == pytest.approx(5.0)  # 2 + 1 + 2
    assert len(session.annotations) == 2
    a0, a1 = session.annotations
    assert (a0.gesture_id, a0.t_start, a0.t_end) == (0, 0.0, 2.0)
    assert (a1.gesture_id, a1.t_start, a1.t_end) == (50, 3.0, 5.0)


def test_session_quaternions_unit_norm():
    session = sg.generate_session(_tiny_script(), sg.default_muscle_model(0),
                                  seed=9)
    quats = session.pose_quat.values.reshape(-1, 21, 4)
    norms = np.linalg.norm(quats, axis=-1)
    assert np.abs(norms - 1.0).max() < 1e-6


def test_session_ground_truth_recoverable_via_preprocess():
    session = sg.generate_session(_tiny_script(), sg.default_muscle_model(0),
                                  seed=9)
    recovered = pp.session_angles(session)
    direct = np.concatenate([
        sg.gesture_trajectory(sg.gesture_spec(0), 2.0, 40.0),
        sg._gap_frames(sg.gesture_trajectory(sg.gesture_spec(0), 2.0, 40.0)[-1],
                       sg.gesture_trajectory(sg.gesture_spec(50), 2.0, 40.0)[0]),
        sg.gesture_trajectory(sg.gesture_spec(50), 2.0, 40.0)])
    assert np.abs(recovered - direct).max() < 1e-6


def test_session_determinism_and_seed_isolation():
    model = sg.default_muscle_model(0)
    s1 = sg.generate_session(_tiny_script(), model, seed=3)
    s2 = sg.generate_session(_tiny_script(), model, seed=3)
    s3 = sg.generate_session(_tiny_script(), model, seed=4)
    np.testing.assert_array_equal(s1.emg.values, s2.emg.values)
    np.testing.assert_array_equal(s1.pose_quat.values, s3.pose_quat.values)
    assert not np.array_equal(s1.emg.values, s3.emg.values)


def test_emg_envelope_tracks_total_activation():
    # learnability invariant: rectified EMG follows rectified drive
    script = sg.GestureScript([(sg.gesture_spec(g), 3.0) for g in (0, 1, 45)])
    model = sg.default_muscle_model(0)
    session = sg.generate_session(script, model, seed=11)
    angles = pp.session_angles(session)
    act = sg.activation(angles, model, 40.0).sum(axis=1)  # (n,) @40 Hz
    emg = np.abs(session.emg.values.astype(np.float64)).sum(axis=1)
    # smooth rectified EMG onto the 40 Hz grid (25 ms boxcar)
    k = 5
    sm = np.convolve(emg, np.ones(k) / k, mode="same")[::5][:act.shape[0]]
    assert pearson(sm, act[:sm.shape[0]]) > 0.5


def test_angles_to_quats_rejects_bad_shape():
    with pytest.raises(sg.SynthError):
        sg.angles_to_quats(np.zeros((5, 19)))
