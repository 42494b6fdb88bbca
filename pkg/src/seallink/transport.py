"""Length-framed transfer of signed calls from signer to storage.

Wire format: a sequence of frames, each a 2-byte big-endian length
followed by exactly that many body bytes; length 0 is the session
terminator.  A session carries one header frame (text key=value
metadata), one frame per packet (the same 12-byte record header used
for chunk hashing, then the raw packet), one manifest frame, and a
CRC32 trailer frame over all previous frame bodies as a cheap
corruption tripwire.  Receiving is all-or-nothing: a session that does
not reach its terminator yields StreamTruncated and no data.
"""
from __future__ import annotations

import socket
import socketserver
import struct
import urllib.parse
import zlib
from dataclasses import dataclass
from typing import Callable, Iterable

from .chain import ChainManifest, render_manifest
from .errors import SeallinkError
from .pcap import CapturedPacket

MAX_FRAME_BODY = 0xFFFF
_HEADER_MAGIC = "SL1"
_PACKET_RECORD_HEADER = struct.Struct(">III")


class TooLarge(SeallinkError):
    """Frame body exceeds the 16-bit length limit."""


class StreamTruncated(SeallinkError):
    """Byte stream ended before the session terminator."""


class MalformedEnvelope(SeallinkError):
    """Frame sequence does not form a valid session envelope."""


def frame(body: bytes) -> bytes:
    if len(body) > MAX_FRAME_BODY:
        raise TooLarge(f"{len(body)} bytes exceeds the frame limit")
    return len(body).to_bytes(2, "big") + body


class Deframer:
    """Incremental frame decoder; buffers partial frames across reads."""

    def __init__(self) -> None:
        self._buf = bytearray()
        self.finished = False

    def feed(self, data: bytes) -> list[bytes]:
        """Consume bytes, return every frame completed by them.

        Bytes arriving after the terminator are ignored.
        """
        if self.finished:
            return []
        self._buf += data
        frames: list[bytes] = []
        while not self.finished:
            if len(self._buf) < 2:
                break
            length = int.from_bytes(self._buf[:2], "big")
            if length == 0:
                self.finished = True
                del self._buf[:2]
                break
            if len(self._buf) < 2 + length:
                break
            frames.append(bytes(self._buf[2 : 2 + length]))
            del self._buf[: 2 + length]
        return frames

    def finish(self) -> None:
        """Declare end of input; raises unless the terminator was seen."""
        if not self.finished:
            raise StreamTruncated("stream ended before the session terminator")


def deframe(data: bytes) -> list[bytes]:
    """One-shot decode of a complete session's bytes."""
    decoder = Deframer()
    frames = decoder.feed(data)
    decoder.finish()
    return frames


@dataclass(frozen=True, slots=True)
class ReceivedSession:
    call_id: str
    caller: str
    callee: str
    start_time: str
    packets: tuple[CapturedPacket, ...]
    manifest_text: str


def _quote(value: str) -> str:
    return urllib.parse.quote(value, safe="")


def _unquote(value: str) -> str:
    return urllib.parse.unquote(value)


def build_envelope(
    packets: Iterable[CapturedPacket],
    manifest: ChainManifest | str,
    caller: str = "",
    callee: str = "",
    start_time: str = "",
) -> bytes:
    """Serialize one session to wire bytes, terminator included."""
    manifest_text = manifest if isinstance(manifest, str) else render_manifest(manifest)
    from .chain import parse_manifest

    call_id = (
        manifest.call_id
        if isinstance(manifest, ChainManifest)
        else parse_manifest(manifest_text).call_id
    )
    packet_list = list(packets)
    header = " ".join(
        (
            _HEADER_MAGIC,
            f"call_id={_quote(call_id)}",
            f"caller={_quote(caller)}",
            f"callee={_quote(callee)}",
            f"start={_quote(start_time)}",
            f"packets={len(packet_list)}",
            "manifest=1",
        )
    ).encode("utf-8")
    bodies = [header]
    for pkt in packet_list:
        bodies.append(
            _PACKET_RECORD_HEADER.pack(pkt.ts_sec, pkt.ts_usec, len(pkt.raw_bytes))
            + pkt.raw_bytes
        )
    bodies.append(manifest_text.encode("utf-8"))
    crc = zlib.crc32(b"".join(bodies)) & 0xFFFFFFFF
    bodies.append(crc.to_bytes(4, "big"))
    return b"".join(frame(b) for b in bodies) + frame(b"")


def parse_envelope(frames: list[bytes]) -> ReceivedSession:
    """Validate and decode a complete frame sequence into a session."""
    if len(frames) < 3:
        raise MalformedEnvelope("need at least header, manifest and crc frames")
    crc_body = frames[-1]
    if len(crc_body) != 4:
        raise MalformedEnvelope("crc frame must be 4 bytes")
    crc_expected = int.from_bytes(crc_body, "big")
    crc_actual = zlib.crc32(b"".join(frames[:-1])) & 0xFFFFFFFF
    if crc_actual != crc_expected:
        raise MalformedEnvelope("crc mismatch over session frames")

    try:
        fields = frames[0].decode("utf-8").split(" ")
    except UnicodeDecodeError:
        raise MalformedEnvelope("header frame is not text") from None
    if not fields or fields[0] != _HEADER_MAGIC:
        raise MalformedEnvelope("bad header magic")
    meta: dict[str, str] = {}
    for item in fields[1:]:
        key, sep, value = item.partition("=")
        if not sep:
            raise MalformedEnvelope(f"bad header field {item!r}")
        meta[key] = value
    for required in ("call_id", "caller", "callee", "start", "packets", "manifest"):
        if required not in meta:
            raise MalformedEnvelope(f"header missing {required}")
    try:
        n_packets = int(meta["packets"])
    except ValueError:
        raise MalformedEnvelope("bad packet count") from None
    if meta["manifest"] != "1":
        raise MalformedEnvelope("session must carry a manifest")

    packet_frames = frames[1:-2]
    if len(packet_frames) != n_packets:
        raise MalformedEnvelope(
            f"header declares {n_packets} packets, envelope has {len(packet_frames)}"
        )
    packets = []
    for body in packet_frames:
        if len(body) < _PACKET_RECORD_HEADER.size:
            raise MalformedEnvelope("packet frame shorter than its record header")
        ts_sec, ts_usec, length = _PACKET_RECORD_HEADER.unpack(
            body[: _PACKET_RECORD_HEADER.size]
        )
        raw = body[_PACKET_RECORD_HEADER.size :]
        if len(raw) != length:
            raise MalformedEnvelope("packet frame length field mismatch")
        try:
            packets.append(CapturedPacket(ts_sec, ts_usec, raw))
        except ValueError as exc:
            raise MalformedEnvelope(f"bad packet record: {exc}") from None
    try:
        manifest_text = frames[-2].decode("utf-8")
    except UnicodeDecodeError:
        raise MalformedEnvelope("manifest frame is not text") from None
    return ReceivedSession(
        call_id=_unquote(meta["call_id"]),
        caller=_unquote(meta["caller"]),
        callee=_unquote(meta["callee"]),
        start_time=_unquote(meta["start"]),
        packets=tuple(packets),
        manifest_text=manifest_text,
    )


def send_session(
    conn: socket.socket,
    packets: Iterable[CapturedPacket],
    manifest: ChainManifest | str,
    caller: str = "",
    callee: str = "",
    start_time: str = "",
) -> None:
    conn.sendall(build_envelope(packets, manifest, caller, callee, start_time))


def receive_session(conn: socket.socket, bufsize: int = 65536) -> ReceivedSession:
    """Read one complete session from a connected socket.

    All-or-nothing: truncation or a malformed envelope raises and no
    partial data escapes.
    """
    decoder = Deframer()
    frames: list[bytes] = []
    while not decoder.finished:
        data = conn.recv(bufsize)
        if not data:
            decoder.finish()
            break
        frames.extend(decoder.feed(data))
    return parse_envelope(frames)


class SessionServer(socketserver.ThreadingTCPServer):
    """Listener that hands each received session to a callback.

    The callback runs on the connection's thread; callers make it
    thread-safe (the storage writer serializes internally).  Errors are
    reported through on_error and the session is discarded.

    Handler threads are non-daemon so server_close() joins them; an
    in-flight upload finishes before shutdown instead of being killed
    mid-receive.  session_timeout bounds how long a stalled client can
    hold that up.
    """

    allow_reuse_address = True
    daemon_threads = False
    session_timeout: float | None = 30.0

    def __init__(
        self,
        address: tuple[str, int],
        on_session: Callable[[ReceivedSession], None],
        on_error: Callable[[Exception], None] | None = None,
    ) -> None:
        self.on_session = on_session
        self.on_error = on_error
        super().__init__(address, _SessionHandler)


class _SessionHandler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        server: SessionServer = self.server  # type: ignore[assignment]
        try:
            if server.session_timeout is not None:
                self.request.settimeout(server.session_timeout)
            received = receive_session(self.request)
            server.on_session(received)
        except Exception as exc:  # noqa: BLE001 - one bad session must not kill the server
            if server.on_error is not None:
                server.on_error(exc)


def parse_hostport(text: str) -> tuple[str, int]:
    """Split 'host:port' for --listen/--connect flags."""
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ValueError(f"expected host:port, got {text!r}")
    return host, int(port)
