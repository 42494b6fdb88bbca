"""The signing pipeline: two captures in, unified dump + manifest out.

Order of stages is fixed: interweave, optional watermark, chunk, then
hash/sign.  Timing collection is optional and adds one perf_counter
pair per stage or per operation; it exists for the report command and
the performance checks.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

from .chain import ChainManifest, PhaseTimings, SignParams, sign_call
from .interweave import Chunk, UnifiedStream, chunkify, interweave
from .pcap import CapturedPacket, parse_capture_file
from .rtp import filter_rtp
from .watermark import Watermark, WatermarkReport, embed_stream


@dataclass
class PipelineTimings:
    interweave_ms: float = 0.0
    watermark_ms: float = 0.0
    chunk_ms: float = 0.0
    total_ms: float = 0.0
    per_op: PhaseTimings = field(default_factory=PhaseTimings)

    @property
    def hash_ms(self) -> list[float]:
        return self.per_op.hash_ms

    @property
    def sign_ms(self) -> list[float]:
        return self.per_op.sign_ms


@dataclass
class PipelineResult:
    stream: UnifiedStream
    chunks: list[Chunk]
    manifest: ChainManifest
    watermark_report: WatermarkReport | None = None
    timings: PipelineTimings | None = None


def load_rtp_capture(data: bytes, stream_id: int = 0) -> tuple[list[CapturedPacket], int]:
    """Parse a capture file and apply the RTP heuristic filter.

    Returns the accepted packets and how many were dropped.
    """
    packets = parse_capture_file(data, stream_id)
    kept = filter_rtp(packets)
    return kept, len(packets) - len(kept)


def run_sign_pipeline(
    first: list[CapturedPacket],
    second: list[CapturedPacket],
    params: SignParams,
    watermark_text: str | None = None,
    keypair=None,
    collect_timings: bool = False,
) -> PipelineResult:
    timings = PipelineTimings() if collect_timings else None
    t_start = time.perf_counter()

    t0 = time.perf_counter()
    stream = interweave(first, second, call_id=params.call_id)
    t1 = time.perf_counter()

    report = None
    if watermark_text is not None:
        report = embed_stream(stream, Watermark.from_text(watermark_text))
        stream = report.stream
    t2 = time.perf_counter()

    chunks = chunkify(stream, params.chunk_size, params.chunk_seconds)
    t3 = time.perf_counter()

    manifest = sign_call(
        chunks,
        params,
        keypair=keypair,
        timings=timings.per_op if timings is not None else None,
    )
    t_end = time.perf_counter()

    if timings is not None:
        timings.interweave_ms = (t1 - t0) * 1000.0
        timings.watermark_ms = (t2 - t1) * 1000.0
        timings.chunk_ms = (t3 - t2) * 1000.0
        timings.total_ms = (t_end - t_start) * 1000.0
    return PipelineResult(
        stream=stream,
        chunks=chunks,
        manifest=manifest,
        watermark_report=report,
        timings=timings,
    )
