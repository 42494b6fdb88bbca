"""Command-line surface for the signed-call pipeline.

Exit codes: 0 success (or AllOk), 1 verification failure, 2 usage or
I/O errors.  Defaults can come from a `key=value` config file
(--config) and the data directory from SEALLINK_DATA_DIR.
"""
from __future__ import annotations

import argparse
import os
import socket
import sys
from pathlib import Path

from . import chain, pipeline, report, transport
from .errors import SeallinkError
from .pcap import parse_capture_file, write_capture_file
from .rtp import generate_call_streams
from .session import (
    ActionExecutor,
    RunConfig,
    SignedCallSession,
    VirtualClock,
    run_script,
)
from .storage import Storage, load_user_db

_CONFIG_TYPES = {
    "data_dir": str,
    "users": str,
    "duration": float,
    "interval_ms": float,
    "seed": int,
    "chunk_size": int,
    "group_size": int,
    "chunk_seconds": float,
    "hash": str,
    "sig_algo": str,
    "key_bits": int,
    "watermark": str,
    "service_code": str,
    "listen": str,
    "connect": str,
    "caller": str,
    "timeout_s": float,
}


def _load_config(path: str) -> dict:
    values = {}
    try:
        text = Path(path).read_text("utf-8")
    except OSError as exc:
        raise SeallinkError(f"config file: {exc}") from exc
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in _CONFIG_TYPES:
            raise SeallinkError(f"config line {lineno}: unknown or bad entry {line!r}")
        try:
            values[key] = _CONFIG_TYPES[key](value.strip())
        except ValueError as exc:
            raise SeallinkError(f"config line {lineno}: {exc}") from None
    return values


def _default_data_dir() -> str:
    return os.environ.get("SEALLINK_DATA_DIR", "seallink-data")


def _add_sign_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--chunk-size", type=int, default=5)
    parser.add_argument("--group-size", type=int, default=5)
    parser.add_argument("--chunk-seconds", type=float, default=5.0)
    parser.add_argument("--hash", default="sha256", choices=("sha256", "sha1"))
    parser.add_argument(
        "--sig-algo", default="SHA256withRSA", choices=("SHA256withRSA", "SHA1withRSA")
    )
    parser.add_argument("--key-bits", type=int, default=2048)
    parser.add_argument(
        "--insecure-test",
        action="store_true",
        help="allow 512-bit keys (test only; manifest is flagged insecure)",
    )
    parser.add_argument("--keygen-seed", type=int, default=None)
    parser.add_argument("--watermark", default=None, metavar="TEXT")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seallink",
        description="Record, chain-sign, store and verify VoIP calls at desk scale.",
    )
    parser.add_argument("--config", default=None, help="key=value defaults file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic two-direction call capture")
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--interval-ms", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", nargs=2, required=True, metavar=("A.pcap", "B.pcap"))
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("sign", help="interweave, chunk and chain-sign two captures")
    p.add_argument("--in", dest="inputs", nargs=2, required=True, metavar=("A.pcap", "B.pcap"))
    p.add_argument("--call-id", default="call")
    _add_sign_flags(p)
    p.add_argument("--per-chunk-signatures", action="store_true")
    p.add_argument("--out-dump", required=True)
    p.add_argument("--out-manifest", required=True)
    p.add_argument("--dump-superhashes", default=None, metavar="FILE")
    p.set_defaults(func=cmd_sign)

    p = sub.add_parser("verify", help="verify a stored dump against its manifest")
    p.add_argument("--dump", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("tamper", help="mutate a dump (adversary simulation for testing)")
    p.add_argument("--dump", required=True)
    p.add_argument("--out", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--flip-bit", type=int, metavar="N")
    group.add_argument("--drop-packet", type=int, metavar="N")
    group.add_argument("--swap", type=int, nargs=2, metavar=("P", "Q"))
    p.set_defaults(func=cmd_tamper)

    p = sub.add_parser("serve", help="listen for signed-call sessions and store them")
    p.add_argument("--listen", required=True, metavar="HOST:PORT")
    p.add_argument("--data-dir", default=_default_data_dir())
    p.add_argument("--users", required=True)
    p.add_argument("--max-sessions", type=int, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("submit", help="send a signed call to a storage server")
    p.add_argument("--connect", required=True, metavar="HOST:PORT")
    p.add_argument("--dump", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--caller", required=True)
    p.add_argument("--callee", required=True)
    p.add_argument("--start-time", default="")
    p.set_defaults(func=cmd_submit)

    p = sub.add_parser("list", help="list calls in a data directory")
    p.add_argument("--data-dir", default=_default_data_dir())
    p.add_argument("--subscriber", default=None)
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("get", help="export one stored call by tracking id")
    p.add_argument("--data-dir", default=_default_data_dir())
    p.add_argument("--tracking-id", required=True)
    p.add_argument("--out-dump", default=None)
    p.add_argument("--out-manifest", default=None)
    p.add_argument("--verify", action="store_true")
    p.set_defaults(func=cmd_get)

    p = sub.add_parser("session", help="replay a scenario script against the state machine")
    p.add_argument("--script", required=True)
    p.add_argument("--caller", required=True)
    p.add_argument("--users", required=True)
    p.add_argument("--data-dir", default=_default_data_dir())
    p.add_argument("--in", dest="inputs", nargs=2, default=None, metavar=("A.pcap", "B.pcap"))
    p.add_argument("--duration", type=float, default=2.0)
    p.add_argument("--interval-ms", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--service-code", default="123")
    _add_sign_flags(p)
    p.set_defaults(func=cmd_session)

    p = sub.add_parser("report", help="run the pipeline with timings; write CSV + figures")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--interval-ms", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--chunk-size", type=int, default=5)
    p.add_argument("--group-size", type=int, default=5)
    p.add_argument("--key-bits", type=int, default=2048)
    p.add_argument("--hash", default="sha256", choices=("sha256", "sha1"))
    p.set_defaults(func=cmd_report)

    # each subcommand parses into a fresh namespace, so config-file
    # defaults must be applied per subparser; keep them reachable
    parser.sub_parsers = list(sub.choices.values())
    return parser


def _apply_config_defaults(parser: argparse.ArgumentParser, values: dict) -> None:
    for sub in parser.sub_parsers:
        dests = {action.dest for action in sub._actions}
        matching = {key: value for key, value in values.items() if key in dests}
        if matching:
            sub.set_defaults(**matching)


def cmd_gen(args) -> int:
    if args.duration <= 0 or args.interval_ms <= 0:
        raise UsageError("duration and interval must be positive")
    first, second = generate_call_streams(args.duration, args.interval_ms, args.seed)
    for path, packets in zip(args.out, (first, second)):
        Path(path).write_bytes(write_capture_file(packets))
        print(f"wrote {len(packets)} packets to {path}")
    return 0


def _read_streams(paths) -> tuple[list, list]:
    streams = []
    for i, path in enumerate(paths):
        packets, dropped = pipeline.load_rtp_capture(Path(path).read_bytes(), stream_id=i)
        if dropped:
            print(f"{path}: dropped {dropped} non-RTP packets", file=sys.stderr)
        streams.append(packets)
    return streams[0], streams[1]


def _sign_params_from_args(args, call_id: str) -> chain.SignParams:
    return chain.SignParams(
        call_id=call_id,
        hash_algo=args.hash,
        sig_algo=args.sig_algo,
        key_bits=args.key_bits,
        chunk_size=args.chunk_size,
        group_size=args.group_size,
        chunk_seconds=args.chunk_seconds,
        allow_insecure=args.insecure_test,
        per_chunk_signatures=getattr(args, "per_chunk_signatures", False),
        keygen_seed=args.keygen_seed,
    )


def cmd_sign(args) -> int:
    first, second = _read_streams(args.inputs)
    params = _sign_params_from_args(args, args.call_id)
    result = pipeline.run_sign_pipeline(
        first, second, params, watermark_text=args.watermark
    )
    Path(args.out_dump).write_bytes(write_capture_file(list(result.stream.packets)))
    Path(args.out_manifest).write_text(chain.render_manifest(result.manifest), "utf-8")
    if args.dump_superhashes:
        superhashes = chain.rebuild_superhashes(result.stream.packets, result.manifest)
        with Path(args.dump_superhashes).open("w", encoding="utf-8") as handle:
            for sh in superhashes:
                handle.write(f"Group {sh.group_index}:\n{sh.text}\n")
    if result.watermark_report is not None:
        print(
            f"watermark: {result.watermark_report.embedded} embedded, "
            f"{result.watermark_report.skipped} skipped"
        )
    print(f"packets: {len(result.stream.packets)}")
    print(f"chunks: {len(result.chunks)}")
    print(f"groups: {len(result.manifest.records)}")
    print(f"modulus: {result.manifest.modulus:x}")
    print(f"exponent: {result.manifest.exponent}")
    print(f"key bits: {result.manifest.key_bits}")
    return 0


def cmd_verify(args) -> int:
    packets = parse_capture_file(Path(args.dump).read_bytes())
    manifest = chain.parse_manifest(Path(args.manifest).read_text("utf-8"))
    verdict = chain.verify_chain(packets, manifest)
    print(str(verdict))
    return 0 if verdict.ok else 1


def cmd_tamper(args) -> int:
    packets = parse_capture_file(Path(args.dump).read_bytes())
    if args.flip_bit is not None:
        total_bits = sum(len(p.raw_bytes) for p in packets) * 8
        if not 0 <= args.flip_bit < total_bits:
            raise UsageError(f"--flip-bit out of range (dump has {total_bits} bits)")
        remaining = args.flip_bit
        for i, pkt in enumerate(packets):
            bits_here = len(pkt.raw_bytes) * 8
            if remaining < bits_here:
                raw = bytearray(pkt.raw_bytes)
                raw[remaining // 8] ^= 0x80 >> (remaining % 8)
                packets[i] = type(pkt)(pkt.ts_sec, pkt.ts_usec, bytes(raw), pkt.stream_id)
                break
            remaining -= bits_here
    elif args.drop_packet is not None:
        if not 0 <= args.drop_packet < len(packets):
            raise UsageError(f"--drop-packet out of range (dump has {len(packets)} packets)")
        del packets[args.drop_packet]
    else:
        p, q = args.swap
        if not (0 <= p < len(packets) and 0 <= q < len(packets)):
            raise UsageError(f"--swap out of range (dump has {len(packets)} packets)")
        packets[p], packets[q] = packets[q], packets[p]
    Path(args.out).write_bytes(write_capture_file(packets))
    print(f"wrote tampered dump to {args.out}")
    return 0


def _storage_from_args(args, need_users: bool) -> Storage:
    users = None
    users_path = getattr(args, "users", None)
    if users_path:
        users = load_user_db(Path(users_path).read_bytes())
    elif need_users:
        raise UsageError("--users is required")
    return Storage(args.data_dir, users=users)


def cmd_serve(args) -> int:
    storage = _storage_from_args(args, need_users=True)
    host, port = transport.parse_hostport(args.listen)
    remaining = args.max_sessions

    def on_session(received: transport.ReceivedSession) -> None:
        tracking_id = storage.store_call(
            received.packets,
            received.manifest_text,
            received.caller,
            received.callee,
            received.start_time or "1970-01-01T00:00:00Z",
        )
        print(f"stored {received.call_id} as {tracking_id} (PendingConfirmation)", flush=True)

    def on_error(exc: Exception) -> None:
        print(f"session rejected: {exc}", file=sys.stderr, flush=True)

    with transport.SessionServer((host, port), on_session, on_error) as server:
        actual = server.server_address
        print(f"listening on {actual[0]}:{actual[1]}", flush=True)
        try:
            if remaining is None:
                server.serve_forever(poll_interval=0.2)
            else:
                while remaining > 0:
                    server.handle_request()
                    remaining -= 1
        except KeyboardInterrupt:
            pass
    return 0


def cmd_submit(args) -> int:
    packets = parse_capture_file(Path(args.dump).read_bytes())
    manifest_text = Path(args.manifest).read_text("utf-8")
    manifest = chain.parse_manifest(manifest_text)
    host, port = transport.parse_hostport(args.connect)
    with socket.create_connection((host, port), timeout=10.0) as conn:
        transport.send_session(
            conn,
            packets,
            manifest,
            caller=args.caller,
            callee=args.callee,
            start_time=args.start_time,
        )
    print(f"submitted {manifest.call_id} ({len(packets)} packets)")
    return 0


def cmd_list(args) -> int:
    storage = Storage(args.data_dir)
    if args.subscriber:
        records = storage.list_calls(args.subscriber)
    else:
        records = storage.all_calls()
    for record in records:
        print(
            f"{record.tracking_id}  {record.status.value:20s}  "
            f"{record.caller} -> {record.callee}  {record.start_time}  "
            f"{record.duration_ms} ms"
        )
    print(f"{len(records)} call(s)")
    return 0


def cmd_get(args) -> int:
    storage = Storage(args.data_dir)
    record, packets, manifest = storage.get_call(args.tracking_id)
    print(f"tracking: {record.tracking_id}")
    print(f"caller: {record.caller}")
    print(f"callee: {record.callee}")
    print(f"start: {record.start_time}")
    print(f"duration: {record.duration_ms} ms")
    print(f"packets: {len(packets)}")
    print(f"groups: {len(manifest.records)}")
    if args.out_dump:
        Path(args.out_dump).write_bytes(write_capture_file(packets))
        print(f"wrote dump to {args.out_dump}")
    if args.out_manifest:
        Path(args.out_manifest).write_text(chain.render_manifest(manifest), "utf-8")
        print(f"wrote manifest to {args.out_manifest}")
    if args.verify:
        verdict = chain.verify_chain(packets, manifest)
        print(str(verdict))
        return 0 if verdict.ok else 1
    return 0


def cmd_session(args) -> int:
    storage = _storage_from_args(args, need_users=True)
    streams = None
    if args.inputs:
        streams = _read_streams(args.inputs)
    config = RunConfig(
        duration_s=args.duration,
        interval_ms=args.interval_ms,
        seed=args.seed,
        chunk_size=args.chunk_size,
        group_size=args.group_size,
        chunk_seconds=args.chunk_seconds,
        hash_algo=args.hash,
        sig_algo=args.sig_algo,
        key_bits=args.key_bits,
        allow_insecure=args.insecure_test,
        keygen_seed=args.keygen_seed,
        watermark=args.watermark,
        service_code=args.service_code,
    )
    clock = VirtualClock()
    session = SignedCallSession(
        args.caller, service_code=args.service_code, now=clock.now()
    )
    executor = ActionExecutor(storage, config, clock, streams, sink=print)
    script_text = Path(args.script).read_text("utf-8")
    run_script(script_text, session, executor)
    print(f"final state: {session.state.value}")
    if session.context.cancel_reason:
        print(f"reason: {session.context.cancel_reason}")
    if session.context.tracking_id and session.state.value == "Completed":
        print(f"tracking: {session.context.tracking_id}")
    return 0


def cmd_report(args) -> int:
    summary = report.run_report(
        args.out_dir,
        duration_s=args.duration,
        interval_ms=args.interval_ms,
        seed=args.seed,
        chunk_size=args.chunk_size,
        group_size=args.group_size,
        key_bits=args.key_bits,
        hash_algo=args.hash,
    )
    for key in (
        "packets",
        "chunks",
        "groups",
        "verdict",
        "hash_ms_mean",
        "sign_ms_mean",
        "verify_ms",
        "total_ms",
    ):
        value = summary[key]
        print(f"{key}: {value:.3f}" if isinstance(value, float) else f"{key}: {value}")
    print(f"csv: {summary['csv']}")
    for figure in summary["figures"]:
        print(f"figure: {figure}")
    return 0


class UsageError(SeallinkError):
    """Bad flag values detected after argparse."""


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        # config defaults must land before parse_args
        if "--config" in argv:
            index = argv.index("--config")
            if index + 1 >= len(argv):
                print("--config needs a path", file=sys.stderr)
                return 2
            _apply_config_defaults(parser, _load_config(argv[index + 1]))
        else:
            for item in argv:
                if item.startswith("--config="):
                    _apply_config_defaults(parser, _load_config(item.split("=", 1)[1]))
                    break
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return int(exc.code or 0)
        return args.func(args)
    except SeallinkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
