"""Shared fixtures: packet builders, seeded keys, a small signed call."""
import random
import struct

import pytest

from seallink.chain import SignParams, session_keygen, sign_call
from seallink.interweave import UnifiedStream, chunkify, interweave
from seallink.pcap import CapturedPacket
from seallink.rtp import generate_call_streams
from seallink.storage import UserRecord, make_pin_hash


def build_raw_packet(
    src_port=5002,
    dst_port=5004,
    payload=b"\x80" + b"\x00" * 50,
    src_ip=(192, 168, 1, 2),
    dst_ip=(192, 168, 1, 3),
):
    """Hand-assembled IPv4/UDP packet, independent of the package builders."""
    udp_len = 8 + len(payload)
    total_len = 20 + udp_len
    header = struct.pack(
        ">BBHHHBBH4B4B", 0x45, 0, total_len, 0, 0, 64, 17, 0, *src_ip, *dst_ip
    )
    parts = struct.unpack(">10H", header)
    total = sum(parts)
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    checksum = ~total & 0xFFFF
    header = header[:10] + struct.pack(">H", checksum) + header[12:]
    return header + struct.pack(">HHHH", src_port, dst_port, udp_len, 0) + payload


def build_rtp_payload(
    seq=1,
    timestamp=160,
    ssrc=0xDEADBEEF,
    marker=False,
    payload_type=96,
    media=b"\x11" * 40,
    csrcs=(),
    padding=0,
    extension=False,
):
    """Hand-assembled RTP packet bytes (optionally padded)."""
    b0 = (2 << 6) | (0x20 if padding else 0) | (0x10 if extension else 0) | len(csrcs)
    b1 = (0x80 if marker else 0) | payload_type
    head = struct.pack(">BBHII", b0, b1, seq, timestamp, ssrc)
    body = struct.pack(">%dI" % len(csrcs), *csrcs) if csrcs else b""
    tail = media
    if padding:
        tail = media + b"\x00" * (padding - 1) + bytes([padding])
    return head + body + tail


def make_packet(ts_sec=1000, ts_usec=0, stream_id=0, seq=1, **kwargs):
    payload = build_rtp_payload(seq=seq, **kwargs)
    return CapturedPacket(ts_sec, ts_usec, build_raw_packet(payload=payload), stream_id)


TEST_USERS = [
    UserRecord(
        subscriber_id="+491234567890",
        unique_service_id="1001",
        pin="1234",
        pin_hash=make_pin_hash("1234", random.Random(1)),
        service_enabled=True,
        reg_date="2015-01-02",
        full_name="Jane Doe",
        address="1 Example Way",
        city="Berlin",
        commercial_entity=False,
    ),
    UserRecord(
        subscriber_id="+491111111111",
        unique_service_id="1002",
        pin="5678",
        pin_hash=make_pin_hash("5678", random.Random(2)),
        service_enabled=True,
        reg_date="2015-01-03",
        full_name="John Roe",
        address="2 Sample Road",
        city="Hamburg",
        commercial_entity=False,
    ),
    UserRecord(
        subscriber_id="+492222222222",
        unique_service_id="1003",
        pin="0000",
        pin_hash=make_pin_hash("0000", random.Random(3)),
        service_enabled=False,
        reg_date="2015-01-04",
        full_name="Acme Support",
        address="3 Trade Street",
        city="Munich",
        commercial_entity=True,
    ),
]


@pytest.fixture
def users():
    return {u.subscriber_id: u for u in TEST_USERS}


@pytest.fixture(scope="session")
def keypair512():
    return session_keygen(512, seed_source=4242, allow_insecure=True)


@pytest.fixture(scope="session")
def small_call():
    """A 2 s signed call at 512 bits: (packets, manifest, params)."""
    first, second = generate_call_streams(duration_s=2.0, seed=101)
    stream = interweave(first, second, call_id="small")
    chunks = chunkify(stream, 5, 5.0)
    params = SignParams(
        call_id="small",
        key_bits=512,
        allow_insecure=True,
        keygen_seed=7,
    )
    manifest = sign_call(chunks, params)
    return list(stream.packets), manifest, params


@pytest.fixture(scope="session")
def small_call_sha1():
    """Same call signed in SHA-1 mode with per-chunk signatures."""
    first, second = generate_call_streams(duration_s=2.0, seed=202)
    stream = interweave(first, second, call_id="small-sha1")
    chunks = chunkify(stream, 5, 5.0)
    params = SignParams(
        call_id="small-sha1",
        hash_algo="sha1",
        sig_algo="SHA1withRSA",
        key_bits=512,
        allow_insecure=True,
        per_chunk_signatures=True,
        keygen_seed=8,
    )
    manifest = sign_call(chunks, params)
    return list(stream.packets), manifest, params


def as_stream(packets, call_id="t"):
    return UnifiedStream(call_id=call_id, packets=tuple(packets))
