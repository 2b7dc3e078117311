"""Pure-Python implementations of the hot-loop kernels.

These are the reference semantics; the compiled twin in _kernels.pyx must
produce byte-identical results (the test suite cross-checks both backends
on random inputs). Keep the operation order identical when editing either
side -- float accumulation order matters for exact equality.
"""

import math

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def hash64(data: bytes, seed: int) -> int:
    """Seeded FNV-1a over a byte string, reduced to 64 bits."""
    h = (_FNV_OFFSET ^ ((seed & _MASK64) * _FNV_PRIME)) & _MASK64
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def embed_text(text: str, dims: int, seed: int, nmin: int = 3, nmax: int = 5) -> list:
    """Feature-hash character n-grams into a signed, L2-normalised vector.

    Lowercased UTF-8 bytes; n-gram sizes nmin..nmax inclusive; the hash's
    top bit picks the sign. Deterministic for (text, dims, seed).
    """
    data = text.lower().encode("utf-8")
    buckets = [0.0] * dims
    n = len(data)
    for size in range(nmin, nmax + 1):
        if n < size:
            break
        for i in range(n - size + 1):
            h = hash64(data[i : i + size], seed)
            idx = h % dims
            if (h >> 63) & 1:
                buckets[idx] -= 1.0
            else:
                buckets[idx] += 1.0
    sq = 0.0
    for v in buckets:
        sq += v * v
    if sq > 0.0:
        norm = math.sqrt(sq)
        for i in range(dims):
            buckets[i] /= norm
    return buckets


def dot(a, b) -> float:
    """Plain sequential dot product (cosine of pre-normalised vectors)."""
    s = 0.0
    for x, y in zip(a, b):
        s += x * y
    return s


def update_bitmap(bitmap: bytearray, probe_ids, mask: int) -> int:
    """Set the bit for each probe id; return how many bits were newly set."""
    new = 0
    for pid in probe_ids:
        idx = pid & mask
        byte = idx >> 3
        bit = 1 << (idx & 7)
        if not bitmap[byte] & bit:
            bitmap[byte] |= bit
            new += 1
    return new


def bitflip(data: bytes, bit_index: int) -> bytes:
    out = bytearray(data)
    out[bit_index >> 3] ^= 1 << (bit_index & 7)
    return bytes(out)


def byteflip(data: bytes, pos: int) -> bytes:
    out = bytearray(data)
    out[pos] ^= 0xFF
    return bytes(out)


def arith_byte(data: bytes, pos: int, delta: int) -> bytes:
    out = bytearray(data)
    out[pos] = (out[pos] + delta) & 0xFF
    return bytes(out)


def block_duplicate(data: bytes, start: int, length: int, dest: int) -> bytes:
    block = data[start : start + length]
    return data[:dest] + block + data[dest:]


def block_delete(data: bytes, start: int, length: int) -> bytes:
    return data[:start] + data[start + length :]


def insert_bytes(data: bytes, pos: int, token: bytes) -> bytes:
    return data[:pos] + token + data[pos:]
