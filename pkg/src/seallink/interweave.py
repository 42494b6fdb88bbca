"""Merging the two directions of a call into one stream, and chunking it.

The merge is by capture time.  Ties are broken by stream id and then
RTP sequence number so the result is a pure function of its inputs:
two captures merged twice give byte-identical output, which the
signature chain depends on.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import SeallinkError
from .inet import parse_ipv4_udp
from .pcap import CapturedPacket
from .rtp import parse_rtp


class UnsortedInput(SeallinkError):
    """An input stream is not in non-decreasing capture-time order."""


class EmptyStream(SeallinkError):
    """Operation needs at least one packet."""


@dataclass(frozen=True, slots=True)
class UnifiedStream:
    call_id: str
    packets: tuple[CapturedPacket, ...]

    def __len__(self) -> int:
        return len(self.packets)

    @property
    def duration_ms(self) -> int:
        if not self.packets:
            return 0
        return (self.packets[-1].timestamp_us - self.packets[0].timestamp_us) // 1000


@dataclass(frozen=True, slots=True)
class Chunk:
    index: int
    packets: tuple[CapturedPacket, ...]


def _rtp_seq(packet: CapturedPacket) -> int:
    try:
        return parse_rtp(parse_ipv4_udp(packet.raw_bytes).payload).header.sequence_number
    except SeallinkError:
        return 0


def _merge_key(packet: CapturedPacket) -> tuple[int, int, int, int]:
    return (packet.ts_sec, packet.ts_usec, packet.stream_id, _rtp_seq(packet))


def _check_sorted(packets: list[CapturedPacket], name: str) -> None:
    for prev, cur in zip(packets, packets[1:]):
        if cur.timestamp_us < prev.timestamp_us:
            raise UnsortedInput(f"{name} is not in capture-time order")


def interweave(
    first: list[CapturedPacket],
    second: list[CapturedPacket],
    call_id: str = "call",
) -> UnifiedStream:
    """Merge two time-ordered captures into one unified stream.

    Inputs must each be in non-decreasing capture-time order; the merge
    is stable, with equal-time packets ordered by stream id then RTP
    sequence number.
    """
    _check_sorted(first, "first stream")
    _check_sorted(second, "second stream")
    merged = tuple(sorted(list(first) + list(second), key=_merge_key))
    return UnifiedStream(call_id=call_id, packets=merged)


def chunkify(
    stream: UnifiedStream,
    chunk_size: int = 5,
    max_chunk_seconds: float = 5.0,
) -> list[Chunk]:
    """Split a stream into consecutive chunks.

    A chunk closes when it holds chunk_size packets, or before adding a
    packet whose capture time is more than max_chunk_seconds after the
    chunk's first packet.  Every packet lands in exactly one chunk and
    order is preserved.
    """
    if chunk_size < 1:
        raise ValueError("chunk_size must be at least 1")
    if max_chunk_seconds <= 0:
        raise ValueError("max_chunk_seconds must be positive")
    max_span_us = int(round(max_chunk_seconds * 1_000_000))
    chunks: list[Chunk] = []
    current: list[CapturedPacket] = []
    first_us = 0
    for pkt in stream.packets:
        if current and pkt.timestamp_us - first_us > max_span_us:
            chunks.append(Chunk(len(chunks), tuple(current)))
            current = []
        if not current:
            first_us = pkt.timestamp_us
        current.append(pkt)
        if len(current) == chunk_size:
            chunks.append(Chunk(len(chunks), tuple(current)))
            current = []
    if current:
        chunks.append(Chunk(len(chunks), tuple(current)))
    return chunks
