"""Framing, envelopes and the store-and-forward session channel."""
import random
import socket
import threading

import pytest

from seallink.chain import parse_manifest
from seallink.transport import (
    Deframer,
    MalformedEnvelope,
    SessionServer,
    StreamTruncated,
    TooLarge,
    build_envelope,
    deframe,
    frame,
    parse_envelope,
    parse_hostport,
    receive_session,
    send_session,
)


def test_frame_shape():
    assert frame(b"") == b"\x00\x00"
    assert frame(b"ab") == b"\x00\x02ab"
    body = b"x" * 0xFFFF
    assert frame(body) == b"\xff\xff" + body
    with pytest.raises(TooLarge):
        frame(b"x" * 0x10000)


def test_deframe_round_trip():
    bodies = [b"", b"a", b"hello world", bytes(range(256))]
    wire = b"".join(frame(b) for b in bodies if b) + frame(b"")
    assert deframe(wire) == [b for b in bodies if b]


def test_deframer_single_byte_feeds():
    bodies = [b"alpha", b"\x00\x00literal", b"z" * 300]
    wire = b"".join(frame(b) for b in bodies) + frame(b"")
    decoder = Deframer()
    out = []
    for i in range(len(wire)):
        out.extend(decoder.feed(wire[i : i + 1]))
    decoder.finish()
    assert out == bodies


def test_deframer_ignores_bytes_after_terminator():
    decoder = Deframer()
    frames = decoder.feed(frame(b"one") + frame(b"") + b"garbage after end")
    assert frames == [b"one"]
    assert decoder.finished
    assert decoder.feed(b"more") == []


def test_deframer_truncation_detected():
    wire = frame(b"complete") + frame(b"partial")[:-3]
    decoder = Deframer()
    assert decoder.feed(wire) == [b"complete"]
    with pytest.raises(StreamTruncated):
        decoder.finish()


def test_deframe_requires_terminator():
    with pytest.raises(StreamTruncated):
        deframe(frame(b"no terminator follows"))


def _session_fixture(small_call):
    packets, manifest, _ = small_call
    return packets[:40], manifest


def test_envelope_round_trip(small_call):
    packets, manifest = _session_fixture(small_call)
    wire = build_envelope(
        packets,
        manifest,
        caller="+49 12=34%56",
        callee="+491111111111",
        start_time="2015-01-05T10:00:00Z",
    )
    received = parse_envelope(deframe(wire))
    assert received.call_id == manifest.call_id
    assert received.caller == "+49 12=34%56"
    assert received.callee == "+491111111111"
    assert received.start_time == "2015-01-05T10:00:00Z"
    # stream_id is not carried on the wire; compare the stored fields
    assert [(p.ts_sec, p.ts_usec, p.raw_bytes) for p in received.packets] == [
        (p.ts_sec, p.ts_usec, p.raw_bytes) for p in packets
    ]
    assert parse_manifest(received.manifest_text) == manifest


def test_envelope_crc_tripwire(small_call):
    packets, manifest = _session_fixture(small_call)
    wire = bytearray(build_envelope(packets, manifest))
    wire[30] ^= 0x40  # damage a packet body byte
    with pytest.raises(MalformedEnvelope):
        parse_envelope(deframe(bytes(wire)))


def test_envelope_packet_count_must_match(small_call):
    packets, manifest = _session_fixture(small_call)
    frames = deframe(build_envelope(packets, manifest))
    dropped = [frames[0]] + frames[2:]  # drop one packet frame, keep crc
    with pytest.raises(MalformedEnvelope):
        parse_envelope(dropped)


def test_envelope_needs_minimum_frames():
    with pytest.raises(MalformedEnvelope):
        parse_envelope([b"SL1 call_id=x", b"manifest"])


def test_envelope_header_validation(small_call):
    packets, manifest = _session_fixture(small_call)
    frames = deframe(build_envelope(packets[:1], manifest))

    def rebuilt(header):
        import zlib

        bodies = [header] + frames[1:-1]
        crc = zlib.crc32(b"".join(bodies)) & 0xFFFFFFFF
        return bodies + [crc.to_bytes(4, "big")]

    with pytest.raises(MalformedEnvelope):
        parse_envelope(rebuilt(b"SL2 call_id=x caller= callee= start= packets=1 manifest=1"))
    with pytest.raises(MalformedEnvelope):
        parse_envelope(rebuilt(b"SL1 caller= callee= start= packets=1 manifest=1"))
    with pytest.raises(MalformedEnvelope):
        parse_envelope(rebuilt(b"SL1 call_id=x caller= callee= start= packets=zz manifest=1"))
    with pytest.raises(MalformedEnvelope):
        parse_envelope(rebuilt(b"SL1 call_id=x caller= callee= start= packets=1 manifest=0"))


def test_send_receive_over_socketpair(small_call):
    packets, manifest = _session_fixture(small_call)
    left, right = socket.socketpair()
    try:
        sender = threading.Thread(
            target=lambda: (
                send_session(left, packets, manifest, caller="a", callee="b"),
                left.shutdown(socket.SHUT_WR),
            )
        )
        sender.start()
        received = receive_session(right)
        sender.join()
    finally:
        left.close()
        right.close()
    assert len(received.packets) == len(packets)
    assert parse_manifest(received.manifest_text) == manifest


def test_receive_truncated_stream_raises(small_call):
    packets, manifest = _session_fixture(small_call)
    wire = build_envelope(packets, manifest)
    left, right = socket.socketpair()
    try:
        left.sendall(wire[: len(wire) // 2])
        left.close()
        with pytest.raises(StreamTruncated):
            receive_session(right)
    finally:
        right.close()


def test_session_server_stores_then_survives_bad_sessions(small_call):
    packets, manifest = _session_fixture(small_call)
    got, errors = [], []
    server = SessionServer(
        ("127.0.0.1", 0), on_session=got.append, on_error=errors.append
    )
    host, port = server.server_address
    runner = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05})
    runner.start()
    try:
        with socket.create_connection((host, port)) as conn:
            send_session(conn, packets, manifest, caller="+49", callee="+48")
        with socket.create_connection((host, port)) as conn:
            conn.sendall(frame(b"SL1 nonsense") + frame(b""))
        with socket.create_connection((host, port)) as conn:
            conn.sendall(b"\x00\x09trunc")  # then hang up mid-frame
        deadline = threading.Event()
        for _ in range(100):
            if len(got) == 1 and len(errors) == 2:
                break
            deadline.wait(0.05)
    finally:
        server.shutdown()
        runner.join()
        server.server_close()
    assert len(got) == 1
    assert got[0].caller == "+49"
    assert len(got[0].packets) == len(packets)
    assert len(errors) == 2
    assert any(isinstance(e, MalformedEnvelope) for e in errors)
    assert any(isinstance(e, StreamTruncated) for e in errors)


def test_random_bodies_survive_adversarial_fragmentation():
    rng = random.Random(31)
    for _ in range(50):
        bodies = [rng.randbytes(rng.randrange(0, 2000)) for _ in range(rng.randrange(1, 6))]
        bodies = [b for b in bodies if b]
        wire = b"".join(frame(b) for b in bodies) + frame(b"")
        decoder = Deframer()
        out = []
        i = 0
        while i < len(wire):
            step = rng.choice([1, 1, 2, 3, 7, 100])
            out.extend(decoder.feed(wire[i : i + step]))
            i += step
        decoder.finish()
        assert out == bodies


def test_parse_hostport():
    assert parse_hostport("127.0.0.1:81") == ("127.0.0.1", 81)
    assert parse_hostport("[::1]:8080") == ("[::1]", 8080)
    with pytest.raises(ValueError):
        parse_hostport("nocolon")
