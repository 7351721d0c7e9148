"""Wire codec round-trips, error taxonomy and incremental framing."""

import numpy as np
import pytest

from emghand import wire
from emghand.streams import SampleChunk


def _rand_chunk(rng):
    n = int(rng.integers(1, 64))
    c = int(rng.integers(1, 16))
    samples = rng.standard_normal((n, c)).astype(np.float32)
    rate = float(np.float32(rng.uniform(1.0, 500.0)))
    return SampleChunk(int(rng.integers(0, 0xFFFF)),
                       float(rng.uniform(0, 1e4)), rate, samples)


def _rand_control(rng):
    kinds = ["", "subscribe", "tick_now", "hello"]
    kind = kinds[int(rng.integers(len(kinds)))]
    if not kind:
        return wire.ControlMsg()
    body = {"n": int(rng.integers(0, 1000)),
            "x": float(np.round(rng.uniform(-5, 5), 6)),
            "s": "abc"[:int(rng.integers(0, 4))]}
    return wire.ControlMsg(kind, body)


def _rand_pair(rng):
    return wire.PairMsg(rng.standard_normal((8, 256)).astype(np.float32),
                        rng.standard_normal((32, 20)).astype(np.float32),
                        float(rng.uniform(0, 100)))


def _rand_weights(rng):
    return wire.WeightsBlob(bytes(rng.integers(0, 256,
                                               int(rng.integers(0, 512)),
                                               dtype=np.uint8)))


def test_empty_control_roundtrip():
    msg = wire.ControlMsg()
    data = wire.encode_message(msg)
    assert wire.decode_message(data) == msg
    # payload really is empty
    assert len(data) == 10


def test_chunk_roundtrip_bit_exact():
    rng = np.random.default_rng(0)
    chunk = _rand_chunk(rng)
    back = wire.decode_message(wire.encode_message(chunk))
    assert back == chunk


def test_fuzz_roundtrip_10k_messages():
    rng = np.random.default_rng(1234)
    makers = [_rand_chunk, _rand_control, _rand_pair, _rand_weights]
    for i in range(10_000):
        msg = makers[i % len(makers)](rng)
        assert wire.decode_message(wire.encode_message(msg)) == msg


def test_truncated_by_one_byte():
    data = wire.encode_message(_rand_chunk(np.random.default_rng(2)))
    with pytest.raises(wire.Truncated):
        wire.decode_message(data[:-1])


def test_truncated_header():
    with pytest.raises(wire.Truncated):
        wire.decode_message(b"ALVI")


def test_bad_magic():
    data = bytearray(wire.encode_message(wire.ControlMsg("x", {})))
    data[0] = ord(b"X")
    with pytest.raises(wire.BadMagic):
        wire.decode_message(bytes(data))


def test_unknown_message_type():
    data = bytearray(wire.encode_message(wire.ControlMsg()))
    data[5] = 0x7F
    with pytest.raises(wire.UnknownMessageType):
        wire.decode_message(bytes(data))


def test_unsupported_version():
    data = bytearray(wire.encode_message(wire.ControlMsg()))
    data[4] = 9
    with pytest.raises(wire.WireError):
        wire.decode_message(bytes(data))


def test_chunk_length_mismatch():
    chunk = _rand_chunk(np.random.default_rng(3))
    data = bytearray(wire.encode_message(chunk))
    data.extend(b"\x00\x00\x00\x00")
    # fix outer frame length, leave chunk header inconsistent
    import struct
    struct.pack_into("<I", data, 6, len(data) - 10)
    with pytest.raises(wire.LengthMismatch):
        wire.decode_message(bytes(data))


def test_trailing_garbage_rejected():
    data = wire.encode_message(wire.ControlMsg()) + b"zz"
    with pytest.raises(wire.LengthMismatch):
        wire.decode_message(data)


def test_frame_reader_reassembles_byte_by_byte():
    rng = np.random.default_rng(4)
    msgs = [_rand_chunk(rng), wire.ControlMsg("go", {"a": 1}),
            _rand_pair(rng), _rand_weights(rng)]
    stream = b"".join(wire.encode_message(m) for m in msgs)
    reader = wire.FrameReader()
    decoded = []
    for i in range(len(stream)):
        reader.feed(stream[i:i + 1])
        decoded.extend(reader)
    assert decoded == msgs


def test_frame_reader_multiple_frames_one_feed():
    msgs = [wire.ControlMsg("a", {}), wire.ControlMsg("b", {})]
    reader = wire.FrameReader()
    reader.feed(b"".join(wire.encode_message(m) for m in msgs))
    assert list(reader) == msgs


def test_pair_shape_validation():
    rng = np.random.default_rng(5)
    with pytest.raises(ValueError):
        wire.PairMsg(rng.standard_normal((8, 100)),
                     rng.standard_normal((32, 20)), 0.0)


def test_socket_send_recv_roundtrip():
    import socket
    import threading

    srv = socket.socket()
    srv.bind(("127.0.0.1", 0))
    srv.listen(1)
    port = srv.getsockname()[1]
    rng = np.random.default_rng(6)
    sent = [_rand_chunk(rng), _rand_pair(rng), wire.ControlMsg("bye", {})]
    got = []

    def server():
        conn, _ = srv.accept()
        while True:
            msg = wire.recv_message(conn)
            if msg is None:
                break
            got.append(msg)
        conn.close()

    th = threading.Thread(target=server)
    th.start()
    cli = socket.create_connection(("127.0.0.1", port))
    for m in sent:
        wire.send_message(cli, m)
    cli.close()
    th.join(timeout=5)
    srv.close()
    assert got == sent
