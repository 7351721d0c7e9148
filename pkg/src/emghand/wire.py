"""Binary wire codec and framing for the pipeline transport.

Frame layout (all little-endian):

    magic 'ALVI' | version u8 (0x01) | msg type u8 | payload len u32 | payload

Message payloads:

    CHUNK   stream_id u16, t0 f64, rate f32, n_samples u32,
            channel_count u16, samples row-major f32
    WEIGHTS opaque model weights container (see handformer save format)
    CONTROL empty, or UTF-8 JSON {"kind": str, "body": {...}}
    PAIR    t_end f64, emg 8x256 f32 row-major, target 32x20 f32 row-major

Transport is length-delimited frames over a reliable byte stream.
"""

from __future__ import annotations

import json
import socket
import struct
from dataclasses import dataclass, field

import numpy as np

from .streams import SampleChunk

MAGIC = b"ALVI"
PROTOCOL_VERSION = 1

MSG_CHUNK = 0x01
MSG_WEIGHTS = 0x02
MSG_CONTROL = 0x03
MSG_PAIR = 0x04

DEFAULT_STREAM_PORT = 7341
DEFAULT_ADAPT_PORT = 7342
DEFAULT_BRIDGE_PORT = 7343

_HEADER = struct.Struct("<4sBBI")
_CHUNK_HEAD = struct.Struct("<HdfIH")
_PAIR_HEAD = struct.Struct("<d")

PAIR_EMG_SHAPE = (8, 256)
PAIR_TARGET_SHAPE = (32, 20)


class WireError(Exception):
    pass


class BadMagic(WireError):
    pass


class Truncated(WireError):
    pass


class UnknownMessageType(WireError):
    pass


class LengthMismatch(WireError):
    pass


@dataclass(frozen=True)
class WeightsBlob:
    data: bytes


@dataclass(frozen=True)
class ControlMsg:
    kind: str = ""
    body: dict = field(default_factory=dict)


class PairMsg:
    """One training example in transit: EMG window plus target pose track."""

    __slots__ = ("emg", "target", "t_end")

    def __init__(self, emg, target, t_end: float):
        emg = np.asarray(emg, dtype=np.float32)
        target = np.asarray(target, dtype=np.float32)
        if emg.shape != PAIR_EMG_SHAPE:
            raise ValueError(f"emg must be {PAIR_EMG_SHAPE}, got {emg.shape}")
        if target.shape != PAIR_TARGET_SHAPE:
            raise ValueError(
                f"target must be {PAIR_TARGET_SHAPE}, got {target.shape}")
        self.emg = emg
        self.target = target
        self.t_end = float(t_end)

    def __eq__(self, other):
        return (isinstance(other, PairMsg)
                and self.t_end == other.t_end
                and np.array_equal(self.emg, other.emg)
                and np.array_equal(self.target, other.target))

    def __repr__(self):
        return f"PairMsg(t_end={self.t_end:.4f})"


Message = SampleChunk | WeightsBlob | ControlMsg | PairMsg


def _encode_payload(msg: Message) -> tuple[int, bytes]:
    if isinstance(msg, SampleChunk):
        head = _CHUNK_HEAD.pack(msg.stream_id, msg.t0, msg.rate,
                                msg.n_samples, msg.channel_count)
        return MSG_CHUNK, head + np.ascontiguousarray(msg.samples).tobytes()
    if isinstance(msg, WeightsBlob):
        return MSG_WEIGHTS, msg.data
    if isinstance(msg, ControlMsg):
        if not msg.kind and not msg.body:
            return MSG_CONTROL, b""
        doc = {"kind": msg.kind, "body": msg.body}
        return MSG_CONTROL, json.dumps(doc, sort_keys=True,
                                       separators=(",", ":")).encode()
    if isinstance(msg, PairMsg):
        return MSG_PAIR, (_PAIR_HEAD.pack(msg.t_end)
                          + msg.emg.tobytes() + msg.target.tobytes())
    raise TypeError(f"cannot encode {type(msg).__name__}")


def encode_message(msg: Message) -> bytes:
    mtype, payload = _encode_payload(msg)
    return _HEADER.pack(MAGIC, PROTOCOL_VERSION, mtype, len(payload)) + payload


def _decode_chunk(payload: bytes) -> SampleChunk:
    if len(payload) < _CHUNK_HEAD.size:
        raise Truncated("chunk payload shorter than its fixed header")
    sid, t0, rate, n, c = _CHUNK_HEAD.unpack_from(payload)
    body = payload[_CHUNK_HEAD.size:]
    expected = n * c * 4
    if len(body) != expected:
        raise LengthMismatch(
            f"chunk declares {n}x{c} f32 ({expected} bytes), "
            f"payload carries {len(body)}")
    samples = np.frombuffer(body, dtype="<f4").reshape(n, c).copy()
    return SampleChunk(sid, t0, rate, samples)


def _decode_control(payload: bytes) -> ControlMsg:
    if not payload:
        return ControlMsg()
    try:
        doc = json.loads(payload.decode())
        return ControlMsg(kind=doc["kind"], body=doc.get("body", {}))
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise WireError(f"malformed control payload: {exc}") from exc


def _decode_pair(payload: bytes) -> PairMsg:
    n_emg = PAIR_EMG_SHAPE[0] * PAIR_EMG_SHAPE[1] * 4
    n_tgt = PAIR_TARGET_SHAPE[0] * PAIR_TARGET_SHAPE[1] * 4
    expected = _PAIR_HEAD.size + n_emg + n_tgt
    if len(payload) != expected:
        raise LengthMismatch(
            f"pair payload must be {expected} bytes, got {len(payload)}")
    (t_end,) = _PAIR_HEAD.unpack_from(payload)
    off = _PAIR_HEAD.size
    emg = np.frombuffer(payload, dtype="<f4", count=8 * 256,
                        offset=off).reshape(PAIR_EMG_SHAPE).copy()
    target = np.frombuffer(payload, dtype="<f4", count=32 * 20,
                           offset=off + n_emg).reshape(PAIR_TARGET_SHAPE).copy()
    return PairMsg(emg, target, t_end)


_DECODERS = {
    MSG_CHUNK: _decode_chunk,
    MSG_WEIGHTS: lambda p: WeightsBlob(bytes(p)),
    MSG_CONTROL: _decode_control,
    MSG_PAIR: _decode_pair,
}


def decode_message(data: bytes) -> Message:
    """Decode exactly one frame; trailing bytes are a LengthMismatch."""
    msg, consumed = decode_frame(data)
    if consumed != len(data):
        raise LengthMismatch(
            f"frame consumed {consumed} of {len(data)} bytes")
    return msg


def decode_frame(data: bytes) -> tuple[Message, int]:
    """Decode one frame from the head of ``data``; returns (msg, consumed)."""
    if len(data) < _HEADER.size:
        raise Truncated(f"need {_HEADER.size} header bytes, have {len(data)}")
    magic, version, mtype, plen = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != PROTOCOL_VERSION:
        raise WireError(f"unsupported protocol version {version}")
    end = _HEADER.size + plen
    if len(data) < end:
        raise Truncated(f"frame declares {plen} payload bytes, "
                        f"have {len(data) - _HEADER.size}")
    decoder = _DECODERS.get(mtype)
    if decoder is None:
        raise UnknownMessageType(f"unknown message type 0x{mtype:02x}")
    return decoder(data[_HEADER.size:end]), end


class FrameReader:
    """Incremental frame parser for a byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes):
        self._buf.extend(data)

    def __iter__(self):
        return self

    def __next__(self) -> Message:
        try:
            msg, consumed = decode_frame(bytes(self._buf))
        except Truncated:
            raise StopIteration from None
        del self._buf[:consumed]
        return msg


def send_message(sock: socket.socket, msg: Message):
    sock.sendall(encode_message(msg))


def recv_message(sock: socket.socket) -> Message | None:
    """Blocking read of one frame; None on clean EOF at a frame boundary."""
    head = _recv_exact(sock, _HEADER.size)
    if head is None:
        return None
    magic, version, mtype, plen = _HEADER.unpack_from(head)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    payload = _recv_exact(sock, plen) if plen else b""
    if payload is None:
        raise Truncated("connection closed mid-frame")
    return decode_message(head + payload)


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        part = sock.recv(n - len(buf))
        if not part:
            return None if not buf else _raise_truncated(len(buf), n)
        buf.extend(part)
    return bytes(buf)


def _raise_truncated(got: int, want: int):
    raise Truncated(f"connection closed after {got} of {want} bytes")
