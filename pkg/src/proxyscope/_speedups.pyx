# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: Keccak-256 and bytecode scanning.

API-compatible with ``proxyscope._pure``.
"""

from libc.stdint cimport uint64_t, uint8_t
from libc.string cimport memset, memcpy

cdef uint64_t[24] RC = [
    0x0000000000000001ULL, 0x0000000000008082ULL, 0x800000000000808AULL, 0x8000000080008000ULL,
    0x000000000000808BULL, 0x0000000080000001ULL, 0x8000000080008081ULL, 0x8000000000008009ULL,
    0x000000000000008AULL, 0x0000000000000088ULL, 0x0000000080008009ULL, 0x000000008000000AULL,
    0x000000008000808BULL, 0x800000000000008BULL, 0x8000000000008089ULL, 0x8000000000008003ULL,
    0x8000000000008002ULL, 0x8000000000000080ULL, 0x000000000000800AULL, 0x800000008000000AULL,
    0x8000000080008081ULL, 0x8000000000008080ULL, 0x0000000080000001ULL, 0x8000000080008008ULL,
]

cdef int[25] ROT = [
    0, 1, 62, 28, 27,
    36, 44, 6, 55, 20,
    3, 10, 43, 25, 39,
    41, 45, 15, 21, 8,
    18, 2, 61, 56, 14,
]

cdef int[25] PI_DEST

cdef int _x, _y
for _y in range(5):
    for _x in range(5):
        PI_DEST[_x + 5 * _y] = _y + 5 * ((2 * _x + 3 * _y) % 5)

DEF RATE = 136


cdef inline uint64_t rotl(uint64_t v, int r) noexcept nogil:
    if r == 0:
        return v
    return (v << r) | (v >> (64 - r))


cdef void keccak_f(uint64_t* a) noexcept nogil:
    cdef uint64_t c[5]
    cdef uint64_t d[5]
    cdef uint64_t b[25]
    cdef int rnd, i, y
    for rnd in range(24):
        for i in range(5):
            c[i] = a[i] ^ a[i + 5] ^ a[i + 10] ^ a[i + 15] ^ a[i + 20]
        for i in range(5):
            d[i] = c[(i + 4) % 5] ^ rotl(c[(i + 1) % 5], 1)
        for i in range(25):
            b[PI_DEST[i]] = rotl(a[i] ^ d[i % 5], ROT[i])
        for y in range(0, 25, 5):
            for i in range(5):
                a[y + i] = b[y + i] ^ ((~b[y + (i + 1) % 5]) & b[y + (i + 2) % 5])
        a[0] ^= RC[rnd]


cdef inline uint64_t load64(const uint8_t* p) noexcept nogil:
    cdef uint64_t v = 0
    cdef int i
    for i in range(8):
        v |= (<uint64_t>p[i]) << (8 * i)
    return v


def keccak256(data):
    """Keccak-256 with the original 0x01 multi-rate padding (not FIPS SHA3)."""
    cdef const uint8_t[:] view = bytes(data)
    cdef Py_ssize_t n = view.shape[0]
    cdef uint64_t a[25]
    cdef uint8_t block[RATE]
    cdef Py_ssize_t off = 0
    cdef Py_ssize_t rem
    cdef int i
    cdef uint8_t out[32]
    memset(a, 0, sizeof(a))
    with nogil:
        while n - off >= RATE:
            for i in range(RATE // 8):
                a[i] ^= load64(&view[off + 8 * i])
            keccak_f(a)
            off += RATE
        rem = n - off
        memset(block, 0, RATE)
        if rem > 0:
            memcpy(block, &view[off], rem)
        block[rem] ^= 0x01
        block[RATE - 1] ^= 0x80
        for i in range(RATE // 8):
            a[i] ^= load64(&block[8 * i])
        keccak_f(a)
        for i in range(32):
            out[i] = <uint8_t>((a[i // 8] >> (8 * (i % 8))) & 0xFF)
    return bytes(out[:32])


def decode_raw(code):
    """Return ``(offset, opcode, size)`` for every instruction in ``code``."""
    cdef const uint8_t[:] view = bytes(code)
    cdef Py_ssize_t n = view.shape[0]
    cdef Py_ssize_t pc = 0
    cdef Py_ssize_t size
    cdef uint8_t op
    out = []
    while pc < n:
        op = view[pc]
        size = 1
        if 0x60 <= op <= 0x7F:
            size += op - 0x5F
        if pc + size > n:
            size = n - pc
        out.append((pc, op, size))
        pc += size
    return out


def contains_opcode(code, int opcode):
    """True iff ``opcode`` occurs as an instruction (never as PUSH data)."""
    cdef const uint8_t[:] view = bytes(code)
    cdef Py_ssize_t n = view.shape[0]
    cdef Py_ssize_t pc = 0
    cdef uint8_t op
    cdef bint found = False
    with nogil:
        while pc < n:
            op = view[pc]
            if op == opcode:
                found = True
                break
            if 0x60 <= op <= 0x7F:
                pc += op - 0x5E
            else:
                pc += 1
    return found


def jumpdests(code):
    cdef const uint8_t[:] view = bytes(code)
    cdef Py_ssize_t n = view.shape[0]
    cdef Py_ssize_t pc = 0
    cdef uint8_t op
    out = []
    while pc < n:
        op = view[pc]
        if op == 0x5B:
            out.append(pc)
            pc += 1
        elif 0x60 <= op <= 0x7F:
            pc += op - 0x5E
        else:
            pc += 1
    return frozenset(out)
