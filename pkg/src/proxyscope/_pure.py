"""Pure-Python implementations of the hot kernels.

These mirror ``_speedups.pyx`` function for function and are used whenever
the compiled extension is unavailable (or ``PROXYSCOPE_PURE=1`` is set).
"""

_MASK64 = (1 << 64) - 1

_ROUND_CONSTANTS = (
    0x0000000000000001, 0x0000000000008082, 0x800000000000808A, 0x8000000080008000,
    0x000000000000808B, 0x0000000080000001, 0x8000000080008081, 0x8000000000008009,
    0x000000000000008A, 0x0000000000000088, 0x0000000080008009, 0x000000008000000A,
    0x000000008000808B, 0x800000000000008B, 0x8000000000008089, 0x8000000000008003,
    0x8000000000008002, 0x8000000000000080, 0x000000000000800A, 0x800000008000000A,
    0x8000000080008081, 0x8000000000008080, 0x0000000080000001, 0x8000000080008008,
)

# Rotation offsets indexed by lane x + 5*y.
_ROTATIONS = (
    0, 1, 62, 28, 27,
    36, 44, 6, 55, 20,
    3, 10, 43, 25, 39,
    41, 45, 15, 21, 8,
    18, 2, 61, 56, 14,
)

# pi step: lane (x, y) moves to (y, 2x + 3y).
_PI_DEST = tuple(y + 5 * ((2 * x + 3 * y) % 5) for y in range(5) for x in range(5))

_RATE = 136  # bytes, for a 256-bit capacity of 512 bits


def _keccak_f(a: list) -> None:
    rot = _ROTATIONS
    dest = _PI_DEST
    b = [0] * 25
    for rc in _ROUND_CONSTANTS:
        c0 = a[0] ^ a[5] ^ a[10] ^ a[15] ^ a[20]
        c1 = a[1] ^ a[6] ^ a[11] ^ a[16] ^ a[21]
        c2 = a[2] ^ a[7] ^ a[12] ^ a[17] ^ a[22]
        c3 = a[3] ^ a[8] ^ a[13] ^ a[18] ^ a[23]
        c4 = a[4] ^ a[9] ^ a[14] ^ a[19] ^ a[24]
        d = (
            c4 ^ (((c1 << 1) | (c1 >> 63)) & _MASK64),
            c0 ^ (((c2 << 1) | (c2 >> 63)) & _MASK64),
            c1 ^ (((c3 << 1) | (c3 >> 63)) & _MASK64),
            c2 ^ (((c4 << 1) | (c4 >> 63)) & _MASK64),
            c3 ^ (((c0 << 1) | (c0 >> 63)) & _MASK64),
        )
        for i in range(25):
            v = a[i] ^ d[i % 5]
            r = rot[i]
            b[dest[i]] = ((v << r) | (v >> (64 - r))) & _MASK64 if r else v
        for y in range(0, 25, 5):
            b0, b1, b2, b3, b4 = b[y], b[y + 1], b[y + 2], b[y + 3], b[y + 4]
            a[y] = b0 ^ (~b1 & b2)
            a[y + 1] = b1 ^ (~b2 & b3)
            a[y + 2] = b2 ^ (~b3 & b4)
            a[y + 3] = b3 ^ (~b4 & b0)
            a[y + 4] = b4 ^ (~b0 & b1)
        a[0] ^= rc


def keccak256(data: bytes) -> bytes:
    """Keccak-256 with the original 0x01 multi-rate padding (not FIPS SHA3)."""
    data = bytes(data)
    pad = _RATE - (len(data) % _RATE)
    if pad == 1:
        padded = data + b"\x81"
    else:
        padded = data + b"\x01" + b"\x00" * (pad - 2) + b"\x80"
    state = [0] * 25
    from_bytes = int.from_bytes
    for off in range(0, len(padded), _RATE):
        block = padded[off:off + _RATE]
        for i in range(_RATE // 8):
            state[i] ^= from_bytes(block[8 * i:8 * i + 8], "little")
        _keccak_f(state)
    return b"".join(state[i].to_bytes(8, "little") for i in range(4))


def decode_raw(code: bytes) -> list:
    """Return ``(offset, opcode, size)`` for every instruction in ``code``.

    ``size`` is the number of bytes actually present, so a PUSH truncated by
    the end of code reports fewer than ``1 + N`` bytes.
    """
    out = []
    n = len(code)
    pc = 0
    while pc < n:
        op = code[pc]
        width = op - 0x5F if 0x60 <= op <= 0x7F else 0
        size = 1 + width
        if pc + size > n:
            size = n - pc
        out.append((pc, op, size))
        pc += size
    return out


def contains_opcode(code: bytes, opcode: int) -> bool:
    """True iff ``opcode`` occurs as an instruction (never as PUSH data)."""
    n = len(code)
    pc = 0
    while pc < n:
        op = code[pc]
        if op == opcode:
            return True
        if 0x60 <= op <= 0x7F:
            pc += op - 0x5E
        else:
            pc += 1
    return False


def jumpdests(code: bytes) -> frozenset:
    out = []
    n = len(code)
    pc = 0
    while pc < n:
        op = code[pc]
        if op == 0x5B:
            out.append(pc)
            pc += 1
        elif 0x60 <= op <= 0x7F:
            pc += op - 0x5E
        else:
            pc += 1
    return frozenset(out)
