"""Tamper-evident VoIP call recording at desk scale.

Capture or generate the two RTP directions of a call, interweave them
into one stream, hash consecutive chunks, chain-sign the chunk digests
with a per-session RSA key, and store dump + manifest so that any later
modification is detectable and localizable.  A small session layer
models the caller/callee consent flow around the pipeline.
"""

from .chain import (
    ChainManifest,
    ChainVerdict,
    FailureReason,
    SessionKeyPair,
    SignParams,
    end_session,
    parse_manifest,
    render_manifest,
    session_keygen,
    sign_call,
    verify_chain,
)
from .errors import SeallinkError
from .interweave import Chunk, UnifiedStream, chunkify, interweave
from .pcap import CapturedPacket, parse_capture_file, write_capture_file
from .pipeline import run_sign_pipeline
from .rtp import generate_call_streams, parse_rtp, rtp_heuristic_accept, serialize_rtp
from .session import RunConfig, SignedCallSession, run_signed_call
from .storage import Storage, UserRecord, load_user_db, save_user_db
from .watermark import Watermark, embed_stream

__version__ = "0.1.0"

__all__ = [
    "CapturedPacket",
    "ChainManifest",
    "ChainVerdict",
    "Chunk",
    "FailureReason",
    "RunConfig",
    "SeallinkError",
    "SessionKeyPair",
    "SignParams",
    "SignedCallSession",
    "Storage",
    "UnifiedStream",
    "UserRecord",
    "Watermark",
    "__version__",
    "chunkify",
    "embed_stream",
    "end_session",
    "generate_call_streams",
    "interweave",
    "load_user_db",
    "parse_capture_file",
    "parse_manifest",
    "parse_rtp",
    "render_manifest",
    "rtp_heuristic_accept",
    "run_sign_pipeline",
    "run_signed_call",
    "save_user_db",
    "serialize_rtp",
    "session_keygen",
    "sign_call",
    "verify_chain",
    "write_capture_file",
]
