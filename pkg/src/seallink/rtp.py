"""RTP header handling, the capture filter, and synthetic call streams.

The heuristic filter mirrors what a desk capture uses to pick RTP out
of mixed traffic without a signalling context: both UDP ports even (RTP
convention puts RTCP on the odd port), the high bit of the first
payload byte set as in RTP version 2, and a packet length under 250 bytes
(voice frames are small; this cuts off most non-RTP traffic that
happens to match the port test).
"""
from __future__ import annotations

import random
import struct
from dataclasses import dataclass

from .errors import SeallinkError
from .inet import build_ipv4_udp, parse_ipv4_udp
from .pcap import CapturedPacket

RTP_VERSION = 2
RTP_FIXED_HEADER_LEN = 12
MAX_FILTER_PACKET_LEN = 250


class TooShort(SeallinkError):
    """Datagram too small for the RTP header it declares."""


class BadVersion(SeallinkError):
    """RTP version field is not 2."""


class BadPadding(SeallinkError):
    """Padding flag set but the pad count is zero or exceeds the payload."""


@dataclass(frozen=True, slots=True)
class RtpHeader:
    version: int
    padding: bool
    extension: bool
    marker: bool
    payload_type: int
    sequence_number: int
    timestamp: int
    ssrc: int
    csrc_list: tuple[int, ...] = ()

    @property
    def csrc_count(self) -> int:
        return len(self.csrc_list)


@dataclass(frozen=True, slots=True)
class RtpPacket:
    header: RtpHeader
    payload: bytes


def parse_rtp(data: bytes) -> RtpPacket:
    """Parse a UDP payload as an RTP packet.

    If the padding flag is set, the pad bytes are stripped from the
    returned payload.  A header extension, if present, is left at the
    front of the payload rather than decoded; the bytes survive
    round-trips untouched.
    """
    if len(data) < RTP_FIXED_HEADER_LEN:
        raise TooShort(f"{len(data)} bytes, need at least {RTP_FIXED_HEADER_LEN}")
    b0, b1, seq = struct.unpack(">BBH", data[:4])
    version = b0 >> 6
    if version != RTP_VERSION:
        raise BadVersion(f"version {version}")
    padding = bool(b0 & 0x20)
    extension = bool(b0 & 0x10)
    cc = b0 & 0x0F
    header_len = RTP_FIXED_HEADER_LEN + 4 * cc
    if len(data) < header_len:
        raise TooShort(f"{len(data)} bytes, header declares {header_len}")
    timestamp, ssrc = struct.unpack(">II", data[4:12])
    csrcs = struct.unpack(">%dI" % cc, data[RTP_FIXED_HEADER_LEN:header_len]) if cc else ()
    payload = data[header_len:]
    if padding:
        if not payload:
            raise BadPadding("padding flag set on an empty payload")
        pad = payload[-1]
        if pad == 0 or pad > len(payload):
            raise BadPadding(f"pad count {pad} out of range")
        payload = payload[:-pad]
    header = RtpHeader(
        version=version,
        padding=padding,
        extension=extension,
        marker=bool(b1 & 0x80),
        payload_type=b1 & 0x7F,
        sequence_number=seq,
        timestamp=timestamp,
        ssrc=ssrc,
        csrc_list=tuple(csrcs),
    )
    return RtpPacket(header, payload)


def serialize_rtp(packet: RtpPacket) -> bytes:
    """Serialize an RtpPacket back to wire bytes.

    Padded packets cannot be serialized: the pad bytes were dropped at
    parse time, so writing the flag back would corrupt the packet.
    """
    h = packet.header
    if h.version != RTP_VERSION:
        raise BadVersion(f"version {h.version}")
    if h.padding:
        raise BadPadding("cannot serialize a packet with the padding flag set")
    if len(h.csrc_list) > 15:
        raise ValueError("at most 15 CSRC entries fit in the header")
    if not 0 <= h.payload_type < 128:
        raise ValueError("payload type out of range")
    b0 = (h.version << 6) | (0x10 if h.extension else 0) | len(h.csrc_list)
    b1 = (0x80 if h.marker else 0) | h.payload_type
    head = struct.pack(">BBHII", b0, b1, h.sequence_number, h.timestamp, h.ssrc)
    csrcs = struct.pack(">%dI" % len(h.csrc_list), *h.csrc_list) if h.csrc_list else b""
    return head + csrcs + packet.payload


def rtp_heuristic_accept(packet: CapturedPacket) -> bool:
    """Apply the capture filter to one packet.

    Accepts when both UDP ports are even, the high bit of the first
    payload byte is set (true for RTP version 2), and the whole packet
    is shorter than 250 bytes.  Raises NotUdp for non-UDP traffic
    (inet.parse_ipv4_udp propagates) so the caller decides whether to
    drop or fail.
    """
    dgram = parse_ipv4_udp(packet.raw_bytes)
    if dgram.src_port & 1 or dgram.dst_port & 1:
        return False
    if not dgram.payload or not dgram.payload[0] & 0x80:
        return False
    return len(packet.raw_bytes) < MAX_FILTER_PACKET_LEN


def filter_rtp(packets: list[CapturedPacket]) -> list[CapturedPacket]:
    """Keep packets accepted by the heuristic filter; drop non-UDP ones."""
    from .inet import NotUdp

    kept = []
    for pkt in packets:
        try:
            if rtp_heuristic_accept(pkt):
                kept.append(pkt)
        except (NotUdp, SeallinkError):
            continue
    return kept


def generate_call_streams(
    duration_s: float = 10.0,
    interval_ms: float = 20.0,
    seed: int | None = None,
    payload_range: tuple[int, int] = (120, 180),
    caller_ip: str = "192.168.1.2",
    callee_ip: str = "192.168.1.3",
    caller_port: int = 5002,
    callee_port: int = 5004,
) -> tuple[list[CapturedPacket], list[CapturedPacket]]:
    """Generate the two directions of a synthetic voice call.

    Each direction sends one packet per interval for the call duration,
    with a small uniform capture jitter (at most a quarter interval) so
    arrival times are realistic but still strictly increasing.  The
    second direction is offset by half an interval.  All packets pass
    the heuristic filter: even ports, RTP version 2, under 250 bytes.

    Deterministic for a given seed.
    """
    if duration_s <= 0 or interval_ms <= 0:
        raise ValueError("duration and interval must be positive")
    count = int(round(duration_s * 1000.0 / interval_ms))
    if count < 1:
        raise ValueError("parameters yield an empty stream")
    if count >= 0x10000:
        raise ValueError("stream too long for a non-wrapping RTP sequence")
    lo, hi = payload_range
    if not 0 < lo <= hi:
        raise ValueError("bad payload size range")

    rng = random.Random(seed)
    interval_us = int(round(interval_ms * 1000.0))
    samples_per_packet = max(1, int(round(interval_ms * 8)))  # 8 kHz clock
    base_us = (1_420_070_400 + rng.randrange(0, 30_000_000)) * 1_000_000
    ssrc_a = rng.getrandbits(32)
    ssrc_b = rng.getrandbits(32)
    while ssrc_b == ssrc_a:
        ssrc_b = rng.getrandbits(32)

    directions = (
        (caller_ip, callee_ip, caller_port, callee_port, ssrc_a, 0, 0),
        (callee_ip, caller_ip, callee_port, caller_port, ssrc_b, interval_us // 2, 1),
    )
    streams: list[list[CapturedPacket]] = []
    for src_ip, dst_ip, sport, dport, ssrc, offset_us, stream_id in directions:
        seq0 = rng.randrange(0, 0x10000 - count)
        rtp_ts = rng.getrandbits(32 - 8)  # headroom so the clock never wraps
        packets = []
        for i in range(count):
            size = rng.randint(lo, hi)
            payload = rng.randbytes(size)
            header = RtpHeader(
                version=RTP_VERSION,
                padding=False,
                extension=False,
                marker=(i == 0),
                payload_type=96,
                sequence_number=seq0 + i,
                timestamp=rtp_ts + i * samples_per_packet,
                ssrc=ssrc,
            )
            raw = build_ipv4_udp(
                src_ip,
                dst_ip,
                sport,
                dport,
                serialize_rtp(RtpPacket(header, payload)),
                ident=(seq0 + i) & 0xFFFF,
            )
            jitter = rng.randrange(0, interval_us // 4) if interval_us >= 4 else 0
            t_us = base_us + offset_us + i * interval_us + jitter
            packets.append(
                CapturedPacket(t_us // 1_000_000, t_us % 1_000_000, raw, stream_id)
            )
        streams.append(packets)
    return streams[0], streams[1]
