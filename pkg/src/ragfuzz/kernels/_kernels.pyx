# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twin of _pykernels.py.

Semantics and float accumulation order must stay identical to the pure
Python module; build with -ffp-contract=off (see setup.py).
"""

from libc.math cimport sqrt

ctypedef unsigned long long u64

cdef u64 _FNV_OFFSET = 0xCBF29CE484222325ULL
cdef u64 _FNV_PRIME = 0x100000001B3ULL


cdef inline u64 _fnv(const unsigned char* data, Py_ssize_t n, u64 seed) nogil:
    cdef u64 h = _FNV_OFFSET ^ (seed * _FNV_PRIME)
    cdef Py_ssize_t i
    for i in range(n):
        h ^= <u64>data[i]
        h *= _FNV_PRIME
    return h


def hash64(bytes data, seed):
    """Seeded FNV-1a over a byte string, reduced to 64 bits."""
    cdef u64 s = <u64>(seed & 0xFFFFFFFFFFFFFFFF)
    return _fnv(<const unsigned char*>data, len(data), s)


def embed_text(str text, int dims, seed, int nmin=3, int nmax=5):
    """Feature-hash character n-grams into a signed, L2-normalised vector."""
    cdef bytes raw = text.lower().encode("utf-8")
    cdef const unsigned char* buf = <const unsigned char*>raw
    cdef Py_ssize_t n = len(raw)
    cdef u64 s = <u64>(seed & 0xFFFFFFFFFFFFFFFF)
    cdef list buckets = [0.0] * dims
    cdef double[::1] acc
    import array
    arr = array.array("d", bytes(8 * dims))
    acc = arr
    cdef Py_ssize_t i, size
    cdef u64 h
    cdef Py_ssize_t idx
    for size in range(nmin, nmax + 1):
        if n < size:
            break
        for i in range(n - size + 1):
            h = _fnv(buf + i, size, s)
            idx = <Py_ssize_t>(h % <u64>dims)
            if (h >> 63) & 1:
                acc[idx] -= 1.0
            else:
                acc[idx] += 1.0
    cdef double sq = 0.0
    for i in range(dims):
        sq += acc[i] * acc[i]
    cdef double norm
    if sq > 0.0:
        norm = sqrt(sq)
        for i in range(dims):
            acc[i] /= norm
    for i in range(dims):
        buckets[i] = acc[i]
    return buckets


def dot(a, b):
    """Plain sequential dot product (cosine of pre-normalised vectors)."""
    cdef double s = 0.0
    cdef double x, y
    for x, y in zip(a, b):
        s += x * y
    return s


def update_bitmap(bitmap, probe_ids, mask):
    """Set the bit for each probe id; return how many bits were newly set."""
    cdef unsigned char[::1] view = bitmap
    cdef long m = mask
    cdef int new = 0
    cdef long pid, idx
    cdef Py_ssize_t byte
    cdef unsigned char bit
    for pid in probe_ids:
        idx = pid & m
        byte = idx >> 3
        bit = <unsigned char>(1 << (idx & 7))
        if not view[byte] & bit:
            view[byte] |= bit
            new += 1
    return new


def bitflip(bytes data, Py_ssize_t bit_index):
    out = bytearray(data)
    out[bit_index >> 3] ^= 1 << (bit_index & 7)
    return bytes(out)


def byteflip(bytes data, Py_ssize_t pos):
    out = bytearray(data)
    out[pos] ^= 0xFF
    return bytes(out)


def arith_byte(bytes data, Py_ssize_t pos, int delta):
    out = bytearray(data)
    out[pos] = (out[pos] + delta) & 0xFF
    return bytes(out)


def block_duplicate(bytes data, Py_ssize_t start, Py_ssize_t length, Py_ssize_t dest):
    block = data[start : start + length]
    return data[:dest] + block + data[dest:]


def block_delete(bytes data, Py_ssize_t start, Py_ssize_t length):
    return data[:start] + data[start + length :]


def insert_bytes(bytes data, Py_ssize_t pos, bytes token):
    return data[:pos] + token + data[pos:]
