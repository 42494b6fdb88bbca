"""LSB steganographic watermarking of RTP payloads.

Party identity text is hidden one bit per payload byte: a 2-byte
big-endian length prefix plus the data, bits taken MSB-first, written
into successive least-significant bits and repeated cyclically until
the payload is full.  Packet sizes and all header bytes are untouched,
so capture records change only in payload bit 0.  Embedding happens
after interweaving and before hashing, which makes the chain bind the
watermark.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import SeallinkError
from .inet import parse_ipv4_udp
from .interweave import UnifiedStream
from .pcap import CapturedPacket
from .rtp import RTP_FIXED_HEADER_LEN, parse_rtp

LENGTH_PREFIX_BITS = 16


class CapacityExceeded(SeallinkError):
    """Encoded watermark needs more bits than the payload has bytes."""


class TruncatedWatermark(SeallinkError):
    """Payload too short for the length it declares (or for any prefix)."""


class WatermarkMismatch(SeallinkError):
    """Repetitions of the embedded watermark disagree."""


@dataclass(frozen=True, slots=True)
class Watermark:
    data: bytes

    def __post_init__(self) -> None:
        if len(self.data) > 0xFFFF:
            raise ValueError("watermark longer than the 16-bit length prefix allows")

    @classmethod
    def from_text(cls, text: str) -> "Watermark":
        return cls(text.encode("utf-8"))

    @property
    def text(self) -> str:
        return self.data.decode("utf-8", errors="replace")

    @property
    def encoded(self) -> bytes:
        return len(self.data).to_bytes(2, "big") + self.data


def capacity(payload_len: int) -> int:
    """Watermark bytes that fit: one bit per payload byte."""
    return payload_len // 8


def _bits_msb_first(data: bytes) -> list[int]:
    bits = []
    for byte in data:
        for shift in range(7, -1, -1):
            bits.append((byte >> shift) & 1)
    return bits


def embed(payload: bytes, wm: Watermark) -> bytes:
    """Write the encoded watermark into the payload's LSBs, repeating."""
    encoded = wm.encoded
    if capacity(len(payload)) < len(encoded):
        raise CapacityExceeded(
            f"need {len(encoded)} bytes of capacity, payload holds {capacity(len(payload))}"
        )
    bits = _bits_msb_first(encoded)
    n = len(bits)
    out = bytearray(payload)
    for i in range(len(out)):
        out[i] = (out[i] & 0xFE) | bits[i % n]
    return bytes(out)


def extract(payload: bytes) -> Watermark:
    """Read a watermark back out of payload LSBs.

    The declared length must fit the payload; every repetition of the
    pattern present in the payload is checked against the first.
    """
    if len(payload) < LENGTH_PREFIX_BITS:
        raise TruncatedWatermark("payload too short for a length prefix")
    lsb = [b & 1 for b in payload]
    length = 0
    for bit in lsb[:LENGTH_PREFIX_BITS]:
        length = (length << 1) | bit
    total_bits = (2 + length) * 8
    if total_bits > len(payload):
        raise TruncatedWatermark(
            f"declared length {length} exceeds capacity {capacity(len(payload))}"
        )
    data = bytearray()
    for byte_index in range(2, 2 + length):
        value = 0
        for bit in lsb[byte_index * 8 : byte_index * 8 + 8]:
            value = (value << 1) | bit
        data.append(value)
    wm = Watermark(bytes(data))
    pattern = _bits_msb_first(wm.encoded)
    n = len(pattern)
    for i in range(total_bits, len(payload)):
        if lsb[i] != pattern[i % n]:
            raise WatermarkMismatch(f"repetition disagrees at payload byte {i}")
    return wm


@dataclass(frozen=True, slots=True)
class WatermarkReport:
    stream: UnifiedStream
    embedded: int
    skipped: int


def embed_stream(stream: UnifiedStream, wm: Watermark) -> WatermarkReport:
    """Watermark every RTP payload in a unified stream independently.

    Packets with insufficient capacity are passed through unmodified
    and counted as skipped, as are packets that do not parse as plain
    unpadded RTP over UDP (none are produced by this package's own
    capture path).
    """
    out: list[CapturedPacket] = []
    embedded = 0
    skipped = 0
    for pkt in stream.packets:
        try:
            dgram = parse_ipv4_udp(pkt.raw_bytes)
            rtp = parse_rtp(dgram.payload)
            if rtp.header.padding:
                raise SeallinkError("padded")
        except SeallinkError:
            out.append(pkt)
            skipped += 1
            continue
        header_len = RTP_FIXED_HEADER_LEN + 4 * rtp.header.csrc_count
        start = dgram.payload_offset + header_len
        end = start + len(rtp.payload)
        try:
            new_payload = embed(rtp.payload, wm)
        except CapacityExceeded:
            out.append(pkt)
            skipped += 1
            continue
        raw = pkt.raw_bytes[:start] + new_payload + pkt.raw_bytes[end:]
        out.append(CapturedPacket(pkt.ts_sec, pkt.ts_usec, raw, pkt.stream_id))
        embedded += 1
    return WatermarkReport(
        stream=UnifiedStream(call_id=stream.call_id, packets=tuple(out)),
        embedded=embedded,
        skipped=skipped,
    )
