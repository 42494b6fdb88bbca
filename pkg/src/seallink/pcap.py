"""Reading and writing classic pcap capture files.

Only the classic (non-ng) format is handled: a 24-byte global header
followed by 16-byte record headers.  Byte order of all header fields is
taken from the magic number.  Files we write always use big-endian
headers, microsecond timestamps and linktype 101 (raw IPv4), so the
record payload is the IPv4 packet itself.  On read, linktype 1
(Ethernet) is also accepted and the 14-byte Ethernet header is stripped
so that CapturedPacket.raw_bytes is the IPv4 packet either way.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import SeallinkError

MAGIC_USEC = 0xA1B2C3D4
MAGIC_NSEC = 0xA1B23C4D

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW_IPV4 = 101

ETHERNET_HEADER_LEN = 14

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16

# version 2.4, zone 0, sigfigs 0, snaplen 65535
_GLOBAL_HEADER_FMT = "IHHiIII"
_RECORD_HEADER_FMT = "IIII"

MAX_PACKET_LEN = 0xFFFF
MIN_PACKET_LEN = 28  # IPv4 header (20) + UDP header (8)


class BadMagic(SeallinkError):
    """File does not start with a supported pcap magic number."""


class TruncatedRecord(SeallinkError):
    """File ends inside a record header or record body."""


class UnsupportedLinkType(SeallinkError):
    """Capture uses a link layer other than Ethernet or raw IPv4."""


class PacketTooLarge(SeallinkError):
    """Packet exceeds the 65535-byte record limit."""


@dataclass(frozen=True, slots=True)
class CapturedPacket:
    """One captured packet: capture timestamp plus the raw IPv4 bytes.

    stream_id tags which source capture the packet came from; it is not
    stored in pcap files and defaults to 0 when read back.
    """

    ts_sec: int
    ts_usec: int
    raw_bytes: bytes
    stream_id: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.ts_usec < 1_000_000:
            raise ValueError("ts_usec out of range")
        if self.ts_sec < 0:
            raise ValueError("ts_sec out of range")
        if len(self.raw_bytes) < MIN_PACKET_LEN:
            raise ValueError("packet too small to hold IPv4 + UDP headers")

    @property
    def timestamp_us(self) -> int:
        return self.ts_sec * 1_000_000 + self.ts_usec


def parse_capture_file(data: bytes, stream_id: int = 0) -> list[CapturedPacket]:
    """Parse a classic pcap file into CapturedPacket records.

    Both byte orders are accepted.  Nanosecond-precision files are
    rejected: the chain format stores microsecond timestamps and a
    silent precision loss would change canonical bytes.
    """
    if len(data) < GLOBAL_HEADER_LEN:
        raise BadMagic("file shorter than a pcap global header")
    magic_be = struct.unpack(">I", data[:4])[0]
    magic_le = struct.unpack("<I", data[:4])[0]
    if magic_be == MAGIC_USEC:
        order = ">"
    elif magic_le == MAGIC_USEC:
        order = "<"
    elif MAGIC_NSEC in (magic_be, magic_le):
        raise BadMagic("nanosecond-precision pcap is not supported")
    else:
        raise BadMagic(f"unrecognized magic 0x{magic_be:08x}")

    (_, _ver_major, _ver_minor, _zone, _sigfigs, _snaplen, linktype) = struct.unpack(
        order + _GLOBAL_HEADER_FMT, data[:GLOBAL_HEADER_LEN]
    )
    if linktype not in (LINKTYPE_ETHERNET, LINKTYPE_RAW_IPV4):
        raise UnsupportedLinkType(f"linktype {linktype} not supported")

    packets: list[CapturedPacket] = []
    offset = GLOBAL_HEADER_LEN
    total = len(data)
    while offset < total:
        if total - offset < RECORD_HEADER_LEN:
            raise TruncatedRecord("file ends inside a record header")
        ts_sec, ts_usec, incl_len, _orig_len = struct.unpack(
            order + _RECORD_HEADER_FMT, data[offset : offset + RECORD_HEADER_LEN]
        )
        offset += RECORD_HEADER_LEN
        if total - offset < incl_len:
            raise TruncatedRecord("file ends inside a record body")
        body = data[offset : offset + incl_len]
        offset += incl_len
        if linktype == LINKTYPE_ETHERNET:
            if len(body) < ETHERNET_HEADER_LEN:
                raise TruncatedRecord("record too short for an Ethernet header")
            body = body[ETHERNET_HEADER_LEN:]
        if len(body) < MIN_PACKET_LEN:
            raise TruncatedRecord("record too short to hold an IPv4/UDP packet")
        if ts_usec >= 1_000_000:
            raise TruncatedRecord("record timestamp has out-of-range microseconds")
        packets.append(CapturedPacket(ts_sec, ts_usec, body, stream_id))
    return packets


def write_capture_file(packets: list[CapturedPacket] | tuple[CapturedPacket, ...]) -> bytes:
    """Serialize packets to a classic big-endian pcap file (linktype 101)."""
    out = [
        struct.pack(
            ">" + _GLOBAL_HEADER_FMT,
            MAGIC_USEC,
            2,
            4,
            0,
            0,
            MAX_PACKET_LEN,
            LINKTYPE_RAW_IPV4,
        )
    ]
    for pkt in packets:
        n = len(pkt.raw_bytes)
        if n > MAX_PACKET_LEN:
            raise PacketTooLarge(f"{n} bytes exceeds the record limit")
        out.append(struct.pack(">" + _RECORD_HEADER_FMT, pkt.ts_sec, pkt.ts_usec, n, n))
        out.append(pkt.raw_bytes)
    return b"".join(out)
