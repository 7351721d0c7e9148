"""Session container file (.alvs): JSON header + wire-format chunk frames.

Layout: magic 'ALVS', format version u8, header length u32 LE, UTF-8 JSON
header (stream infos, annotations, generator seed, muscle model hash),
then concatenated wire frames holding every stream's samples in time
order. Writing is fully deterministic: the same session produces the
same bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import wire
from .streams import AlignedTrack, SampleChunk
from .synthgen import Annotation, SessionRecording

MAGIC = b"ALVS"
FORMAT_VERSION = 1
CHUNK_ROWS = 512

EMG_STREAM_ID = 1
POSE_STREAM_ID = 2


class SessionFileError(Exception):
    pass


def _header(session: SessionRecording) -> dict:
    return {
        "format": FORMAT_VERSION,
        "seed": session.seed,
        "model_hash": session.model_hash,
        "annotations": [[a.gesture_id, a.t_start, a.t_end]
                        for a in session.annotations],
        "streams": [
            {"stream_id": EMG_STREAM_ID, "name": "emg", "kind": "emg",
             "channel_count": 8, "nominal_rate": session.emg.rate,
             "t0": session.emg.t0, "n_samples": session.emg.n},
            {"stream_id": POSE_STREAM_ID, "name": "pose", "kind": "pose_quat",
             "channel_count": 84, "nominal_rate": session.pose_quat.rate,
             "t0": session.pose_quat.t0, "n_samples": session.pose_quat.n},
        ],
    }


def _track_chunks(stream_id: int, track: AlignedTrack):
    values = np.asarray(track.values, dtype=np.float32)
    for start in range(0, values.shape[0], CHUNK_ROWS):
        part = values[start:start + CHUNK_ROWS]
        yield SampleChunk(stream_id, track.t0 + start / track.rate,
                          track.rate, part)


def write_session(session: SessionRecording, path):
    header = json.dumps(_header(session), sort_keys=True,
                        separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for sid, track in ((EMG_STREAM_ID, session.emg),
                           (POSE_STREAM_ID, session.pose_quat)):
            for chunk in _track_chunks(sid, track):
                fh.write(wire.encode_message(chunk))


def read_session(path) -> SessionRecording:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise SessionFileError("bad magic; not a session file")
    if len(blob) < 9:
        raise SessionFileError("truncated session header")
    version = blob[4]
    if version != FORMAT_VERSION:
        raise SessionFileError(f"unsupported session format {version}")
    (hlen,) = struct.unpack_from("<I", blob, 5)
    if len(blob) < 9 + hlen:
        raise SessionFileError("truncated session header JSON")
    try:
        header = json.loads(blob[9:9 + hlen].decode())
    except ValueError as exc:
        raise SessionFileError(f"bad header JSON: {exc}") from exc

    reader = wire.FrameReader()
    reader.feed(blob[9 + hlen:])
    per_stream: dict[int, list[SampleChunk]] = {}
    try:
        for msg in reader:
            if isinstance(msg, SampleChunk):
                per_stream.setdefault(msg.stream_id, []).append(msg)
    except wire.WireError as exc:
        raise SessionFileError(f"bad chunk frame: {exc}") from exc

    tracks = {}
    for info in header.get("streams", []):
        sid = info["stream_id"]
        chunks = per_stream.get(sid, [])
        if not chunks:
            raise SessionFileError(f"stream {sid} has no data")
        rate = info["nominal_rate"]
        for prev, nxt in zip(chunks, chunks[1:]):
            if abs(nxt.t0 - prev.end) > 0.5 / rate:
                raise SessionFileError(f"stream {sid} has a gap")
        values = np.concatenate([c.samples for c in chunks], axis=0)
        expected_n = info.get("n_samples")
        if expected_n is not None and values.shape[0] != expected_n:
            raise SessionFileError(
                f"stream {sid}: header declares {expected_n} samples, "
                f"file carries {values.shape[0]}")
        if info["kind"] == "pose_quat":
            values = values.astype(np.float64)
        tracks[info["kind"]] = AlignedTrack(
            t0=info["t0"], rate=rate, values=values)

    if "emg" not in tracks or "pose_quat" not in tracks:
        raise SessionFileError("session must contain emg and pose_quat")
    annotations = [Annotation(int(g), float(a), float(b))
                   for g, a, b in header.get("annotations", [])]
    return SessionRecording(emg=tracks["emg"], pose_quat=tracks["pose_quat"],
                            annotations=annotations,
                            seed=int(header.get("seed", 0)),
                            model_hash=header.get("model_hash", ""))
