"""Hash chaining and RSA signing of call chunks, plus chain verification.

The scheme: consecutive chunks are hashed, K digests at a time form a
group, and each group's digests (as text lines) plus the previous
group's signature line form the superhash text.  Signing that text
binds every group to all earlier ones, so any change to the stored
packets or to any signature record makes verification fail from the
first affected group onward.

One keypair exists per call session and the private half lives only in
memory; ending the session destroys it.  The manifest (public key,
parameters and signature records) is all a verifier needs.
"""
from __future__ import annotations

import hashlib
import random
import struct
import time
from dataclasses import dataclass, field
from enum import Enum

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes as _hashes
from cryptography.hazmat.primitives.asymmetric import padding as _padding
from cryptography.hazmat.primitives.asymmetric import rsa as _rsa

from .errors import SeallinkError
from .interweave import Chunk, UnifiedStream, chunkify
from .pcap import CapturedPacket

HASH_HEX_WIDTH = {"sha256": 64, "sha1": 40}
SIG_ALGO_HASH = {"SHA256withRSA": "sha256", "SHA1withRSA": "sha1"}
_CRYPTO_HASH = {"sha256": _hashes.SHA256, "sha1": _hashes.SHA1}

PUBLIC_EXPONENT = 65537
VALID_KEY_BITS = (512, 1024, 2048, 4096)
MIN_SECURE_KEY_BITS = 1024

DEFAULT_HASH_ALGO = "sha256"
DEFAULT_SIG_ALGO = "SHA256withRSA"
DEFAULT_KEY_BITS = 2048


class UnsupportedAlgo(SeallinkError):
    """Hash or signature algorithm identifier is not recognized."""


class EmptyGroup(SeallinkError):
    """A superhash needs at least one chunk digest."""


class PrevMissing(SeallinkError):
    """Group index > 0 requires the previous signature record."""


class PrevUnexpected(SeallinkError):
    """Group 0 must not be given a previous signature record."""


class WeakKeyRefused(SeallinkError):
    """512-bit keys are only allowed when explicitly marked test-only."""


class SessionEnded(SeallinkError):
    """The session's private key has been disposed."""


class SelfCheckFailed(SeallinkError):
    """A fresh signature failed immediate self-verification."""


class MalformedManifest(SeallinkError):
    """Manifest text or structure violates the format."""


@dataclass(frozen=True, slots=True)
class ChunkHash:
    chunk_index: int
    algo: str
    digest_hex: str


@dataclass(frozen=True, slots=True)
class SuperHash:
    group_index: int
    lines: tuple[str, ...]

    @property
    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)

    @property
    def text_bytes(self) -> bytes:
        return self.text.encode("ascii")


@dataclass(frozen=True, slots=True)
class SignatureRecord:
    group_index: int
    signature_hex: str
    first_check: bool
    sig_algo: str
    chunk_signatures: tuple[str, ...] = ()


def _require_hash_algo(algo: str) -> None:
    if algo not in HASH_HEX_WIDTH:
        raise UnsupportedAlgo(f"hash algorithm {algo!r}")


def _require_sig_algo(sig_algo: str) -> None:
    if sig_algo not in SIG_ALGO_HASH:
        raise UnsupportedAlgo(f"signature algorithm {sig_algo!r}")


def chunk_canonical_bytes(chunk: Chunk) -> bytes:
    """Canonical byte encoding of one chunk, independent of any container.

    Per packet: timestamp seconds, microseconds and length as 32-bit
    big-endian, then the raw packet bytes.  The stored dump alone can
    reproduce these bytes exactly.
    """
    if not chunk.packets:
        raise EmptyGroup("chunk has no packets")
    parts = []
    for pkt in chunk.packets:
        parts.append(struct.pack(">III", pkt.ts_sec, pkt.ts_usec, len(pkt.raw_bytes)))
        parts.append(pkt.raw_bytes)
    return b"".join(parts)


def hash_chunk(chunk: Chunk, algo: str = DEFAULT_HASH_ALGO) -> ChunkHash:
    _require_hash_algo(algo)
    digest = hashlib.new(algo, chunk_canonical_bytes(chunk)).hexdigest()
    return ChunkHash(chunk_index=chunk.index, algo=algo, digest_hex=digest)


def build_superhash(
    chunk_hashes: list[ChunkHash] | tuple[ChunkHash, ...],
    prev: SignatureRecord | None,
    group_index: int,
    chunk_signatures: tuple[str, ...] = (),
) -> SuperHash:
    """Assemble one group's superhash text lines.

    Lines are the chunk digests in order, then (in per-chunk-signature
    mode) one signature line per chunk, then the previous group's
    signature line when group_index > 0.
    """
    if not chunk_hashes:
        raise EmptyGroup("no chunk digests in group")
    if group_index > 0 and prev is None:
        raise PrevMissing(f"group {group_index} needs the previous signature")
    if group_index == 0 and prev is not None:
        raise PrevUnexpected("group 0 has no previous signature")
    if chunk_signatures and len(chunk_signatures) != len(chunk_hashes):
        raise ValueError("one chunk signature per chunk digest required")
    lines = [h.digest_hex for h in chunk_hashes]
    lines.extend(chunk_signatures)
    if prev is not None:
        lines.append(prev.signature_hex)
    return SuperHash(group_index=group_index, lines=tuple(lines))


# --- keypair handling ---------------------------------------------------

_SMALL_PRIMES = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47]


def _is_probable_prime(n: int, rng: random.Random, rounds: int = 40) -> bool:
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n % p == 0:
            return n == p
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = pow(x, 2, n)
            if x == n - 1:
                break
        else:
            return False
    return True


def _generate_prime(bits: int, rng: random.Random) -> int:
    # top two bits forced so p*q lands on exactly key_bits bits
    while True:
        candidate = rng.getrandbits(bits) | (0b11 << (bits - 2)) | 1
        if candidate % PUBLIC_EXPONENT == 1:
            continue
        if _is_probable_prime(candidate, rng):
            return candidate


def _keypair_from_rng(key_bits: int, rng: random.Random):
    half = key_bits // 2
    while True:
        p = _generate_prime(half, rng)
        q = _generate_prime(half, rng)
        if p == q:
            continue
        phi = (p - 1) * (q - 1)
        if phi % PUBLIC_EXPONENT == 0:
            continue
        n = p * q
        if n.bit_length() != key_bits:
            continue
        if p < q:
            p, q = q, p
        d = pow(PUBLIC_EXPONENT, -1, phi)
        public = _rsa.RSAPublicNumbers(PUBLIC_EXPONENT, n)
        private = _rsa.RSAPrivateNumbers(
            p=p,
            q=q,
            d=d,
            dmp1=d % (p - 1),
            dmq1=d % (q - 1),
            iqmp=pow(q, -1, p),
            public_numbers=public,
        )
        return private.private_key()


class SessionKeyPair:
    """One call session's RSA keypair.

    The private key exists only inside this object; end_session (or
    .dispose()) drops it, after which signing raises SessionEnded.  The
    object never exposes a serialized private form.
    """

    def __init__(self, private_key, key_bits: int) -> None:
        pub = private_key.public_key().public_numbers()
        self._private = private_key
        self.key_bits = key_bits
        self.modulus = pub.n
        self.exponent = pub.e

    @property
    def live(self) -> bool:
        return self._private is not None

    @property
    def insecure(self) -> bool:
        return self.key_bits < MIN_SECURE_KEY_BITS

    def sign(self, data: bytes, sig_algo: str = DEFAULT_SIG_ALGO) -> bytes:
        _require_sig_algo(sig_algo)
        if self._private is None:
            raise SessionEnded("private key already disposed")
        hash_cls = _CRYPTO_HASH[SIG_ALGO_HASH[sig_algo]]
        return self._private.sign(data, _padding.PKCS1v15(), hash_cls())

    def dispose(self) -> None:
        self._private = None


def session_keygen(
    key_bits: int = DEFAULT_KEY_BITS,
    seed_source: int | random.Random | None = None,
    allow_insecure: bool = False,
) -> SessionKeyPair:
    """Generate a fresh per-session keypair with public exponent 65537.

    key_bits must be one of 512, 1024, 2048 or 4096.  512 is refused
    unless allow_insecure is set; such keys are flagged insecure in the
    manifest.  A seed_source makes generation deterministic (testing
    only); without one, OS entropy is used.
    """
    if key_bits not in VALID_KEY_BITS:
        raise ValueError(f"key_bits must be one of {VALID_KEY_BITS}")
    if key_bits < MIN_SECURE_KEY_BITS and not allow_insecure:
        raise WeakKeyRefused(f"{key_bits}-bit keys need allow_insecure")
    if seed_source is not None:
        rng = seed_source if isinstance(seed_source, random.Random) else random.Random(seed_source)
        private = _keypair_from_rng(key_bits, rng)
    elif key_bits < MIN_SECURE_KEY_BITS:
        private = _keypair_from_rng(key_bits, random.SystemRandom())
    else:
        private = _rsa.generate_private_key(PUBLIC_EXPONENT, key_bits)
    return SessionKeyPair(private, key_bits)


def end_session(keypair: SessionKeyPair) -> None:
    """Dispose the private key.  Idempotent."""
    keypair.dispose()


def verify_signature(
    modulus: int,
    exponent: int,
    data: bytes,
    signature_hex: str,
    sig_algo: str = DEFAULT_SIG_ALGO,
) -> bool:
    """Check one RSA PKCS#1 v1.5 signature using only public values."""
    _require_sig_algo(sig_algo)
    try:
        signature = bytes.fromhex(signature_hex)
    except ValueError:
        return False
    hash_cls = _CRYPTO_HASH[SIG_ALGO_HASH[sig_algo]]
    public = _rsa.RSAPublicNumbers(exponent, modulus).public_key()
    try:
        public.verify(signature, data, _padding.PKCS1v15(), hash_cls())
        return True
    except (InvalidSignature, ValueError):
        return False


def sign_superhash(
    superhash: SuperHash,
    keypair: SessionKeyPair,
    sig_algo: str = DEFAULT_SIG_ALGO,
    chunk_signatures: tuple[str, ...] = (),
) -> SignatureRecord:
    """Sign a superhash's canonical text and self-verify the result.

    A failed self-check disposes the key and aborts the session: a
    record whose first check failed would be useless as evidence.
    """
    signature = keypair.sign(superhash.text_bytes, sig_algo)
    signature_hex = signature.hex().zfill(keypair.key_bits // 4)
    first_check = verify_signature(
        keypair.modulus, keypair.exponent, superhash.text_bytes, signature_hex, sig_algo
    )
    if not first_check:
        keypair.dispose()
        raise SelfCheckFailed(f"group {superhash.group_index} signature did not verify")
    return SignatureRecord(
        group_index=superhash.group_index,
        signature_hex=signature_hex,
        first_check=True,
        sig_algo=sig_algo,
        chunk_signatures=chunk_signatures,
    )


# --- manifest -----------------------------------------------------------

@dataclass(frozen=True, slots=True)
class ChainManifest:
    call_id: str
    hash_algo: str
    sig_algo: str
    key_bits: int
    chunk_size: int
    group_size: int
    chunk_seconds: float
    modulus: int
    exponent: int
    records: tuple[SignatureRecord, ...]

    def __post_init__(self) -> None:
        if self.hash_algo not in HASH_HEX_WIDTH:
            raise MalformedManifest(f"hash algorithm {self.hash_algo!r}")
        if self.sig_algo not in SIG_ALGO_HASH:
            raise MalformedManifest(f"signature algorithm {self.sig_algo!r}")
        if self.chunk_size < 1 or self.group_size < 1 or self.chunk_seconds <= 0:
            raise MalformedManifest("chunk/group parameters out of range")
        if self.modulus.bit_length() != self.key_bits:
            raise MalformedManifest("modulus size does not match KeyBits")
        width = self.key_bits // 4
        for i, record in enumerate(self.records):
            if record.group_index != i:
                raise MalformedManifest("group indices not consecutive from 0")
            for sig_hex in (record.signature_hex, *record.chunk_signatures):
                if len(sig_hex) != width or not _is_hex(sig_hex):
                    raise MalformedManifest(f"bad signature hex in group {i}")

    @property
    def insecure(self) -> bool:
        return self.key_bits < MIN_SECURE_KEY_BITS


def _is_hex(text: str) -> bool:
    return bool(text) and all(c in "0123456789abcdef" for c in text)


def render_manifest(manifest: ChainManifest) -> str:
    lines = [
        f"CallId: {manifest.call_id}",
        f"HashAlgo: {manifest.hash_algo}",
        f"SigAlgo: {manifest.sig_algo}",
        f"KeyBits: {manifest.key_bits}",
        f"ChunkSize: {manifest.chunk_size}",
        f"GroupSize: {manifest.group_size}",
        f"ChunkSeconds: {manifest.chunk_seconds!r}",
        f"Modulus: {manifest.modulus:x}",
        f"Exponent: {manifest.exponent}",
    ]
    if manifest.insecure:
        lines.append("Insecure: true")
    for record in manifest.records:
        lines.append("")
        lines.append(f"Group: {record.group_index}")
        for sig_hex in record.chunk_signatures:
            lines.append(f"ChunkSig: {sig_hex}")
        lines.append(f"Signature: {record.signature_hex}")
        lines.append(f"FirstCheck: {'true' if record.first_check else 'false'}")
    return "".join(line + "\n" for line in lines)


def _parse_kv(line: str, lineno: int) -> tuple[str, str]:
    key, sep, value = line.partition(":")
    if not sep or not key.strip() or " " in key.strip():
        raise MalformedManifest(f"line {lineno}: expected 'Key: value'")
    return key.strip(), value.strip()


def parse_manifest(text: str) -> ChainManifest:
    """Parse manifest text; any structural problem raises MalformedManifest."""
    header: dict[str, str] = {}
    record_rows: list[dict[str, object]] = []
    current: dict[str, object] | None = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line:
            continue
        key, value = _parse_kv(line, lineno)
        if key == "Group":
            try:
                index = int(value)
            except ValueError:
                raise MalformedManifest(f"line {lineno}: bad group index") from None
            current = {"index": index, "chunk_sigs": []}
            record_rows.append(current)
        elif key in ("Signature", "FirstCheck", "ChunkSig"):
            if current is None:
                raise MalformedManifest(f"line {lineno}: {key} before any Group")
            if key == "ChunkSig":
                current["chunk_sigs"].append(value)  # type: ignore[union-attr]
            elif key in current:
                raise MalformedManifest(f"line {lineno}: duplicate {key}")
            else:
                current[key] = value
        else:
            if current is not None:
                raise MalformedManifest(f"line {lineno}: header line after records")
            if key in header:
                raise MalformedManifest(f"line {lineno}: duplicate header {key}")
            header[key] = value

    required = (
        "CallId",
        "HashAlgo",
        "SigAlgo",
        "KeyBits",
        "ChunkSize",
        "GroupSize",
        "ChunkSeconds",
        "Modulus",
        "Exponent",
    )
    for name in required:
        if name not in header:
            raise MalformedManifest(f"missing header {name}")
    try:
        key_bits = int(header["KeyBits"])
        chunk_size = int(header["ChunkSize"])
        group_size = int(header["GroupSize"])
        chunk_seconds = float(header["ChunkSeconds"])
        modulus = int(header["Modulus"], 16)
        exponent = int(header["Exponent"])
    except ValueError as exc:
        raise MalformedManifest(f"bad header value: {exc}") from None
    insecure_flag = header.get("Insecure", "false").lower() == "true"
    if insecure_flag != (key_bits < MIN_SECURE_KEY_BITS):
        raise MalformedManifest("Insecure flag inconsistent with KeyBits")
    unknown = set(header) - set(required) - {"Insecure"}
    if unknown:
        raise MalformedManifest(f"unknown header lines: {sorted(unknown)}")

    records = []
    for row in record_rows:
        if "Signature" not in row or "FirstCheck" not in row:
            raise MalformedManifest(f"group {row['index']}: incomplete record")
        fc = str(row["FirstCheck"]).lower()
        if fc not in ("true", "false"):
            raise MalformedManifest(f"group {row['index']}: bad FirstCheck")
        records.append(
            SignatureRecord(
                group_index=int(row["index"]),  # type: ignore[arg-type]
                signature_hex=str(row["Signature"]),
                first_check=(fc == "true"),
                sig_algo=header["SigAlgo"],
                chunk_signatures=tuple(row["chunk_sigs"]),  # type: ignore[arg-type]
            )
        )
    return ChainManifest(
        call_id=header["CallId"],
        hash_algo=header["HashAlgo"],
        sig_algo=header["SigAlgo"],
        key_bits=key_bits,
        chunk_size=chunk_size,
        group_size=group_size,
        chunk_seconds=chunk_seconds,
        modulus=modulus,
        exponent=exponent,
        records=tuple(records),
    )


# --- whole-call signing -------------------------------------------------

@dataclass
class SignParams:
    call_id: str = "call"
    hash_algo: str = DEFAULT_HASH_ALGO
    sig_algo: str = DEFAULT_SIG_ALGO
    key_bits: int = DEFAULT_KEY_BITS
    chunk_size: int = 5
    group_size: int = 5
    chunk_seconds: float = 5.0
    allow_insecure: bool = False
    per_chunk_signatures: bool = False
    keygen_seed: int | None = None


@dataclass
class PhaseTimings:
    """Per-operation wall times in milliseconds, by pipeline phase."""

    hash_ms: list[float] = field(default_factory=list)
    sign_ms: list[float] = field(default_factory=list)


def _timed(out: list[float] | None, fn, *args):
    if out is None:
        return fn(*args)
    t0 = time.perf_counter()
    result = fn(*args)
    out.append((time.perf_counter() - t0) * 1000.0)
    return result


def sign_call(
    chunks: list[Chunk],
    params: SignParams,
    keypair: SessionKeyPair | None = None,
    timings: PhaseTimings | None = None,
) -> ChainManifest:
    """Hash, group and chain-sign a whole call's chunks.

    When no keypair is passed, a fresh session keypair is generated and
    its private half disposed before returning, so the only secret ever
    to exist for the call is gone once the manifest is built.
    """
    if not chunks:
        raise EmptyGroup("cannot sign a call with no chunks")
    for i, chunk in enumerate(chunks):
        if chunk.index != i:
            raise ValueError("chunks do not form a consecutive partition")
    _require_hash_algo(params.hash_algo)
    _require_sig_algo(params.sig_algo)
    if params.group_size < 1:
        raise ValueError("group_size must be at least 1")

    own_key = keypair is None
    if keypair is None:
        keypair = session_keygen(
            params.key_bits,
            seed_source=params.keygen_seed,
            allow_insecure=params.allow_insecure,
        )
    try:
        hash_out = timings.hash_ms if timings is not None else None
        sign_out = timings.sign_ms if timings is not None else None
        digests = [_timed(hash_out, hash_chunk, c, params.hash_algo) for c in chunks]
        records: list[SignatureRecord] = []
        prev: SignatureRecord | None = None
        k = params.group_size
        for g in range(0, len(digests), k):
            group = digests[g : g + k]
            group_index = g // k
            chunk_sigs: tuple[str, ...] = ()
            if params.per_chunk_signatures:
                width = keypair.key_bits // 4
                chunk_sigs = tuple(
                    keypair.sign(
                        bytes.fromhex(d.digest_hex), params.sig_algo
                    ).hex().zfill(width)
                    for d in group
                )
            superhash = build_superhash(group, prev, group_index, chunk_sigs)
            record = _timed(
                sign_out, sign_superhash, superhash, keypair, params.sig_algo, chunk_sigs
            )
            records.append(record)
            prev = record
    finally:
        if own_key:
            keypair.dispose()
    return ChainManifest(
        call_id=params.call_id,
        hash_algo=params.hash_algo,
        sig_algo=params.sig_algo,
        key_bits=keypair.key_bits,
        chunk_size=params.chunk_size,
        group_size=params.group_size,
        chunk_seconds=params.chunk_seconds,
        modulus=keypair.modulus,
        exponent=keypair.exponent,
        records=tuple(records),
    )


# --- verification -------------------------------------------------------

class FailureReason(str, Enum):
    HASH_MISMATCH = "HashMismatch"
    BAD_SIGNATURE = "BadSignature"
    MISSING_RECORD = "MissingRecord"
    EXTRA_RECORD = "ExtraRecord"


@dataclass(frozen=True, slots=True)
class ChainVerdict:
    ok: bool
    total_groups: int
    groups_ok: int
    first_bad_group: int | None = None
    reason: FailureReason | None = None

    def __str__(self) -> str:
        if self.ok:
            return f"AllOk ({self.total_groups} groups)"
        return (
            f"Failed at group {self.first_bad_group}: {self.reason.value} "
            f"({self.groups_ok} groups verified before failure)"
        )


_DIGEST_INFO_PREFIX = {
    "sha256": bytes.fromhex("3031300d060960864801650304020105000420"),
    "sha1": bytes.fromhex("3021300906052b0e03021a05000414"),
}


def _decode_pkcs1_digest(signature_hex: str, modulus: int, exponent: int, hash_algo: str) -> bytes | None:
    """Recover the digest embedded in a PKCS#1 v1.5 signature.

    Returns None when the decrypted block is not a well-formed
    EMSA-PKCS1-v1_5 encoding for the given hash.  Used only to classify
    a failure already established by real verification.
    """
    try:
        sig_int = int(signature_hex, 16)
    except ValueError:
        return None
    if sig_int >= modulus:
        return None
    k = (modulus.bit_length() + 7) // 8
    em = pow(sig_int, exponent, modulus).to_bytes(k, "big")
    if em[:2] != b"\x00\x01":
        return None
    try:
        sep = em.index(b"\x00", 2)
    except ValueError:
        return None
    if any(b != 0xFF for b in em[2:sep]) or sep - 2 < 8:
        return None
    rest = em[sep + 1 :]
    prefix = _DIGEST_INFO_PREFIX[hash_algo]
    digest_len = hashlib.new(hash_algo).digest_size
    if len(rest) != len(prefix) + digest_len or not rest.startswith(prefix):
        return None
    return rest[len(prefix) :]


def rebuild_superhashes(
    packets: list[CapturedPacket] | tuple[CapturedPacket, ...],
    manifest: ChainManifest,
) -> list[SuperHash]:
    """Recompute every group's superhash text from a stored dump.

    Previous-signature lines (and per-chunk signature lines, when the
    manifest has them) are taken from the manifest records, exactly as
    the chain defines them.
    """
    stream = UnifiedStream(call_id=manifest.call_id, packets=tuple(packets))
    chunks = chunkify(stream, manifest.chunk_size, manifest.chunk_seconds)
    digests = [hash_chunk(c, manifest.hash_algo) for c in chunks]
    k = manifest.group_size
    superhashes = []
    for g in range(0, len(digests), k):
        group_index = g // k
        lines = [d.digest_hex for d in digests[g : g + k]]
        if group_index < len(manifest.records):
            lines.extend(manifest.records[group_index].chunk_signatures)
        if group_index > 0 and group_index - 1 < len(manifest.records):
            lines.append(manifest.records[group_index - 1].signature_hex)
        superhashes.append(SuperHash(group_index=group_index, lines=tuple(lines)))
    return superhashes


def verify_chain(
    packets: list[CapturedPacket] | tuple[CapturedPacket, ...],
    manifest: ChainManifest,
) -> ChainVerdict:
    """Verify a stored dump against its manifest using public data only.

    The dump is re-chunked with the manifest's parameters, every
    group's superhash is rebuilt and every signature record checked.
    The verdict localizes the first failing group.  Failure reasons:
    HashMismatch when the signature is a valid signing of something
    other than the rebuilt text (the dump changed), BadSignature when
    the record itself is not a plausible signature for this group,
    MissingRecord/ExtraRecord when the record count does not match the
    rebuilt group count.  The distinction between the first two is a
    classification aid for single tampering events; the binding verdict
    is simply that verification failed at first_bad_group.
    """
    superhashes = rebuild_superhashes(packets, manifest)
    expected = len(superhashes)
    n_records = len(manifest.records)
    overlap = min(expected, n_records)

    def record_ok(g: int) -> bool:
        return verify_signature(
            manifest.modulus,
            manifest.exponent,
            superhashes[g].text_bytes,
            manifest.records[g].signature_hex,
            manifest.sig_algo,
        )

    first_bad = None
    for g in range(overlap):
        if not record_ok(g):
            first_bad = g
            break

    if first_bad is None:
        if expected == n_records:
            return ChainVerdict(ok=True, total_groups=expected, groups_ok=expected)
        reason = (
            FailureReason.MISSING_RECORD
            if n_records < expected
            else FailureReason.EXTRA_RECORD
        )
        return ChainVerdict(
            ok=False,
            total_groups=max(expected, n_records),
            groups_ok=overlap,
            first_bad_group=overlap,
            reason=reason,
        )

    if expected != n_records:
        reason = (
            FailureReason.MISSING_RECORD
            if n_records < expected
            else FailureReason.EXTRA_RECORD
        )
    else:
        embedded = _decode_pkcs1_digest(
            manifest.records[first_bad].signature_hex,
            manifest.modulus,
            manifest.exponent,
            SIG_ALGO_HASH[manifest.sig_algo],
        )
        if embedded is None:
            reason = FailureReason.BAD_SIGNATURE
        elif first_bad + 1 < overlap and not record_ok(first_bad + 1):
            # the next group signed over the stored prev line; if it fails
            # too, the stored record itself is not what the chain produced
            reason = FailureReason.BAD_SIGNATURE
        else:
            reason = FailureReason.HASH_MISMATCH
    return ChainVerdict(
        ok=False,
        total_groups=max(expected, n_records),
        groups_ok=first_bad,
        first_bad_group=first_bad,
        reason=reason,
    )
