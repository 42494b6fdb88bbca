"""Minimal IPv4/UDP parsing and construction.

Just enough to pull UDP datagrams out of raw IPv4 packets and to build
synthetic ones.  Offsets of the UDP payload within the packet are kept
so callers can splice a modified payload back in without re-serializing
the headers.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import SeallinkError

IP_PROTO_UDP = 17
IPV4_MIN_HEADER = 20
UDP_HEADER_LEN = 8


class MalformedPacket(SeallinkError):
    """Bytes do not parse as an IPv4/UDP packet."""


class NotUdp(SeallinkError):
    """IPv4 packet carries a protocol other than UDP."""


@dataclass(frozen=True, slots=True)
class UdpDatagram:
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    payload: bytes
    payload_offset: int  # offset of payload within the raw IPv4 packet
    udp_offset: int  # offset of the UDP header within the raw IPv4 packet


def _ip_to_str(raw: bytes) -> str:
    return ".".join(str(b) for b in raw)


def _str_to_ip(text: str) -> bytes:
    parts = text.split(".")
    if len(parts) != 4:
        raise ValueError(f"bad IPv4 address {text!r}")
    out = bytes(int(p) for p in parts)
    for p in parts:
        if not 0 <= int(p) <= 255:
            raise ValueError(f"bad IPv4 address {text!r}")
    return out


def parse_ipv4_udp(raw: bytes) -> UdpDatagram:
    """Parse a raw IPv4 packet and return its UDP datagram.

    The payload is bounded by both the IP total length and the UDP
    length field, so link-layer padding after the datagram is ignored.
    """
    if len(raw) < IPV4_MIN_HEADER:
        raise MalformedPacket("shorter than an IPv4 header")
    version = raw[0] >> 4
    if version != 4:
        raise MalformedPacket(f"IP version {version}, expected 4")
    ihl = (raw[0] & 0x0F) * 4
    if ihl < IPV4_MIN_HEADER:
        raise MalformedPacket("IPv4 header length below minimum")
    if len(raw) < ihl:
        raise MalformedPacket("packet shorter than its IPv4 header")
    total_len = struct.unpack(">H", raw[2:4])[0]
    if total_len < ihl or total_len > len(raw):
        raise MalformedPacket("IPv4 total length inconsistent with packet size")
    proto = raw[9]
    if proto != IP_PROTO_UDP:
        raise NotUdp(f"IP protocol {proto}")
    if total_len - ihl < UDP_HEADER_LEN:
        raise MalformedPacket("too short for a UDP header")
    udp = raw[ihl:total_len]
    src_port, dst_port, udp_len, _cksum = struct.unpack(">HHHH", udp[:UDP_HEADER_LEN])
    if udp_len < UDP_HEADER_LEN or udp_len > len(udp):
        raise MalformedPacket("UDP length field inconsistent with packet size")
    return UdpDatagram(
        src_ip=_ip_to_str(raw[12:16]),
        dst_ip=_ip_to_str(raw[16:20]),
        src_port=src_port,
        dst_port=dst_port,
        payload=udp[UDP_HEADER_LEN:udp_len],
        payload_offset=ihl + UDP_HEADER_LEN,
        udp_offset=ihl,
    )


def _ipv4_checksum(header: bytes) -> int:
    if len(header) % 2:
        header += b"\x00"
    total = sum(struct.unpack(">%dH" % (len(header) // 2), header))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def build_ipv4_udp(
    src_ip: str,
    dst_ip: str,
    src_port: int,
    dst_port: int,
    payload: bytes,
    ident: int = 0,
    ttl: int = 64,
) -> bytes:
    """Build a raw IPv4/UDP packet.

    The UDP checksum is left at zero, which RFC 768 defines as
    "checksum not computed"; this keeps the bytes stable when payloads
    are later modified in place.
    """
    udp_len = UDP_HEADER_LEN + len(payload)
    total_len = IPV4_MIN_HEADER + udp_len
    if total_len > 0xFFFF:
        raise ValueError("payload too large for one IPv4 packet")
    header = struct.pack(
        ">BBHHHBBH4s4s",
        0x45,
        0,
        total_len,
        ident & 0xFFFF,
        0,
        ttl,
        IP_PROTO_UDP,
        0,
        _str_to_ip(src_ip),
        _str_to_ip(dst_ip),
    )
    checksum = _ipv4_checksum(header)
    header = header[:10] + struct.pack(">H", checksum) + header[12:]
    udp = struct.pack(">HHHH", src_port, dst_port, udp_len, 0) + payload
    return header + udp
