"""Independent reference implementations used to cross-check the package.

Everything in this module is written directly from the underlying
standards (FIPS 180-4 for the hashes, RFC 8017 for PKCS#1 v1.5) or from
first principles, and imports nothing from the package under test, so a
bug in the implementation cannot hide inside its own oracle.
"""
import hashlib
import struct

# --- pure-Python SHA-256 (FIPS 180-4) --------------------------------------

_SHA256_K = [
    0x428A2F98, 0x71374491, 0xB5C0FBCF, 0xE9B5DBA5, 0x3956C25B, 0x59F111F1,
    0x923F82A4, 0xAB1C5ED5, 0xD807AA98, 0x12835B01, 0x243185BE, 0x550C7DC3,
    0x72BE5D74, 0x80DEB1FE, 0x9BDC06A7, 0xC19BF174, 0xE49B69C1, 0xEFBE4786,
    0x0FC19DC6, 0x240CA1CC, 0x2DE92C6F, 0x4A7484AA, 0x5CB0A9DC, 0x76F988DA,
    0x983E5152, 0xA831C66D, 0xB00327C8, 0xBF597FC7, 0xC6E00BF3, 0xD5A79147,
    0x06CA6351, 0x14292967, 0x27B70A85, 0x2E1B2138, 0x4D2C6DFC, 0x53380D13,
    0x650A7354, 0x766A0ABB, 0x81C2C92E, 0x92722C85, 0xA2BFE8A1, 0xA81A664B,
    0xC24B8B70, 0xC76C51A3, 0xD192E819, 0xD6990624, 0xF40E3585, 0x106AA070,
    0x19A4C116, 0x1E376C08, 0x2748774C, 0x34B0BCB5, 0x391C0CB3, 0x4ED8AA4A,
    0x5B9CCA4F, 0x682E6FF3, 0x748F82EE, 0x78A5636F, 0x84C87814, 0x8CC70208,
    0x90BEFFFA, 0xA4506CEB, 0xBEF9A3F7, 0xC67178F2,
]

_SHA256_H0 = [
    0x6A09E667, 0xBB67AE85, 0x3C6EF372, 0xA54FF53A,
    0x510E527F, 0x9B05688C, 0x1F83D9AB, 0x5BE0CD19,
]


def _rotr(x, n):
    return ((x >> n) | (x << (32 - n))) & 0xFFFFFFFF


def _sha_pad(data):
    bit_len = len(data) * 8
    data = data + b"\x80"
    while len(data) % 64 != 56:
        data += b"\x00"
    return data + struct.pack(">Q", bit_len)


def sha256_pure(data: bytes) -> str:
    """SHA-256 hex digest computed without hashlib."""
    h = list(_SHA256_H0)
    padded = _sha_pad(data)
    for block_start in range(0, len(padded), 64):
        block = padded[block_start : block_start + 64]
        w = list(struct.unpack(">16I", block))
        for t in range(16, 64):
            s0 = _rotr(w[t - 15], 7) ^ _rotr(w[t - 15], 18) ^ (w[t - 15] >> 3)
            s1 = _rotr(w[t - 2], 17) ^ _rotr(w[t - 2], 19) ^ (w[t - 2] >> 10)
            w.append((w[t - 16] + s0 + w[t - 7] + s1) & 0xFFFFFFFF)
        a, b, c, d, e, f, g, hh = h
        for t in range(64):
            big_s1 = _rotr(e, 6) ^ _rotr(e, 11) ^ _rotr(e, 25)
            ch = (e & f) ^ (~e & g)
            temp1 = (hh + big_s1 + ch + _SHA256_K[t] + w[t]) & 0xFFFFFFFF
            big_s0 = _rotr(a, 2) ^ _rotr(a, 13) ^ _rotr(a, 22)
            maj = (a & b) ^ (a & c) ^ (b & c)
            temp2 = (big_s0 + maj) & 0xFFFFFFFF
            hh, g, f, e = g, f, e, (d + temp1) & 0xFFFFFFFF
            d, c, b, a = c, b, a, (temp1 + temp2) & 0xFFFFFFFF
        h = [(x + y) & 0xFFFFFFFF for x, y in zip(h, (a, b, c, d, e, f, g, hh))]
    return "".join(f"{x:08x}" for x in h)


def sha1_pure(data: bytes) -> str:
    """SHA-1 hex digest computed without hashlib."""
    h = [0x67452301, 0xEFCDAB89, 0x98BADCFE, 0x10325476, 0xC3D2E1F0]
    padded = _sha_pad(data)
    for block_start in range(0, len(padded), 64):
        block = padded[block_start : block_start + 64]
        w = list(struct.unpack(">16I", block))
        for t in range(16, 80):
            value = w[t - 3] ^ w[t - 8] ^ w[t - 14] ^ w[t - 16]
            w.append(((value << 1) | (value >> 31)) & 0xFFFFFFFF)
        a, b, c, d, e = h
        for t in range(80):
            if t < 20:
                f, k = (b & c) | (~b & d), 0x5A827999
            elif t < 40:
                f, k = b ^ c ^ d, 0x6ED9EBA1
            elif t < 60:
                f, k = (b & c) | (b & d) | (c & d), 0x8F1BBCDC
            else:
                f, k = b ^ c ^ d, 0xCA62C1D6
            rot_a = ((a << 5) | (a >> 27)) & 0xFFFFFFFF
            a, b, c, d, e = (
                (rot_a + f + e + k + w[t]) & 0xFFFFFFFF,
                a,
                ((b << 30) | (b >> 2)) & 0xFFFFFFFF,
                c,
                d,
            )
        h = [(x + y) & 0xFFFFFFFF for x, y in zip(h, (a, b, c, d, e))]
    return "".join(f"{x:08x}" for x in h)


# --- raw RSA PKCS#1 v1.5 verification (RFC 8017 §8.2.2) ---------------------

DIGEST_INFO = {
    "sha256": bytes.fromhex("3031300d060960864801650304020105000420"),
    "sha1": bytes.fromhex("3021300906052b0e03021a05000414"),
}


def rsa_verify_raw(
    modulus: int,
    exponent: int,
    data: bytes,
    signature_hex: str,
    hash_name: str,
    use_pure_sha: bool = False,
) -> bool:
    """Verify by modular exponentiation and byte comparison only.

    Builds the expected EMSA-PKCS1-v1_5 block and compares it with
    sig^e mod n; no cryptography library is involved.  With
    use_pure_sha the digest also avoids hashlib.
    """
    try:
        sig = int(signature_hex, 16)
    except ValueError:
        return False
    if sig >= modulus:
        return False
    k = (modulus.bit_length() + 7) // 8
    em = pow(sig, exponent, modulus).to_bytes(k, "big")
    if use_pure_sha:
        digest = bytes.fromhex(
            sha256_pure(data) if hash_name == "sha256" else sha1_pure(data)
        )
    else:
        digest = hashlib.new(hash_name, data).digest()
    t = DIGEST_INFO[hash_name] + digest
    ps_len = k - len(t) - 3
    if ps_len < 8:
        return False
    expected = b"\x00\x01" + b"\xff" * ps_len + b"\x00" + t
    return em == expected


# --- packet handling oracles ------------------------------------------------

def chunk_packets(packets, chunk_size, max_chunk_seconds):
    """Brute-force re-chunking: list of lists, same rules the signer follows.

    A chunk closes at chunk_size packets, or before a packet arriving
    more than max_chunk_seconds after the chunk's first packet.
    """
    max_span_us = int(round(max_chunk_seconds * 1_000_000))
    chunks = []
    current = []
    for pkt in packets:
        t = pkt.ts_sec * 1_000_000 + pkt.ts_usec
        if current:
            first = current[0].ts_sec * 1_000_000 + current[0].ts_usec
            if t - first > max_span_us:
                chunks.append(current)
                current = []
        current.append(pkt)
        if len(current) == chunk_size:
            chunks.append(current)
            current = []
    if current:
        chunks.append(current)
    return chunks


def _rtp_seq_of(raw: bytes) -> int:
    """RTP sequence number straight out of the bytes; 0 if not RTP/UDP."""
    try:
        ihl = (raw[0] & 0x0F) * 4
        if raw[0] >> 4 != 4 or raw[9] != 17:
            return 0
        rtp = raw[ihl + 8 :]
        if len(rtp) < 4 or rtp[0] >> 6 != 2:
            return 0
        return (rtp[2] << 8) | rtp[3]
    except IndexError:
        return 0


def merge_streams(first, second):
    """Concatenate and stable-sort by (time, stream id, RTP seq)."""
    def key(pkt):
        return (
            pkt.ts_sec * 1_000_000 + pkt.ts_usec,
            pkt.stream_id,
            _rtp_seq_of(pkt.raw_bytes),
        )

    return sorted(list(first) + list(second), key=key)


def chunk_digest(packets, hash_name, use_pure_sha=False):
    """Digest of one chunk's canonical bytes (record header + raw each)."""
    blob = b"".join(
        struct.pack(">III", p.ts_sec, p.ts_usec, len(p.raw_bytes)) + p.raw_bytes
        for p in packets
    )
    if use_pure_sha:
        return sha256_pure(blob) if hash_name == "sha256" else sha1_pure(blob)
    return hashlib.new(hash_name, blob).hexdigest()


def first_bad_group(
    packets,
    records,
    modulus,
    exponent,
    hash_name,
    chunk_size,
    group_size,
    chunk_seconds,
):
    """Brute-force chain check: (ok, first bad group index or None).

    records is a list of (signature_hex, chunk_signatures_tuple) in
    group order.  Rebuilds every superhash text from scratch and
    verifies each record by raw modular arithmetic; on a record-count
    mismatch with a clean overlap, the first bad group is the boundary.
    """
    chunks = chunk_packets(packets, chunk_size, chunk_seconds)
    digests = [chunk_digest(c, hash_name) for c in chunks]
    n_groups = (len(digests) + group_size - 1) // group_size
    texts = []
    for g in range(n_groups):
        lines = digests[g * group_size : (g + 1) * group_size]
        if g < len(records):
            lines = lines + list(records[g][1])
        if g > 0 and g - 1 < len(records):
            lines = lines + [records[g - 1][0]]
        texts.append("".join(line + "\n" for line in lines))
    overlap = min(n_groups, len(records))
    for g in range(overlap):
        if not rsa_verify_raw(
            modulus, exponent, texts[g].encode("ascii"), records[g][0], hash_name
        ):
            return False, g
    if n_groups != len(records):
        return False, overlap
    return True, None


def records_of(manifest):
    """Adapt a manifest-shaped object to the records list this module takes."""
    return [(r.signature_hex, tuple(r.chunk_signatures)) for r in manifest.records]
