"""Arithmetic in GF(2^128) plus the fixed-width XOR value types used by the protocols.

Field elements are plain Python ints in [0, 2^128), interpreted as polynomials
over GF(2) with bit 0 as the constant term. Addition is XOR; multiplication is
a carry-less product reduced modulo x^128 + x^7 + x^2 + x + 1. Serialization
is 16 bytes little-endian, so byte 0 holds bits 0..7.

Two derived value types ride on top:

- 128-bit mask values (the hash range used for OKVS payloads). The nominal
  payload width only needs to cover the statistical collision budget, but this
  artifact instantiates it at the full field width, so embed/truncate are
  identities at 128 bits.
- 64-bit XOR values (PRF outputs and per-element shares), carried as 8-byte
  strings and embedded into field elements by zero-padding.

The batch helpers at the bottom operate on numpy arrays of shape (n, 2) with
dtype '<u8' (limb 0 = bits 0..63). They exist because the encoders and the
protocol hot paths multiply one fixed scalar into vectors of thousands of
elements; the scalar path would dominate the runtime otherwise.
"""

from __future__ import annotations

import numpy as np

GF_BITS = 128
GF_BYTES = 16
MASK128 = (1 << 128) - 1

# x^128 + x^7 + x^2 + x + 1, the standard irreducible polynomial for GF(2^128)
REDUCTION_POLY = (1 << 128) | 0x87
_LOW_TERMS = 0x87  # x^7 + x^2 + x + 1

# width of the mask-value type (full field width in this artifact)
B_BITS = 128

# width of XOR-group values (PRF outputs, shares)
XOR_BYTES = 8
XOR_ZERO = bytes(XOR_BYTES)

ZERO = 0
ONE = 1

_LIMB = np.dtype("<u8")


def add(a: int, b: int) -> int:
    """Field addition (= subtraction): bitwise XOR."""
    return a ^ b


def clmul(a: int, b: int) -> int:
    """Carry-less product of two polynomials over GF(2), no reduction."""
    r = 0
    while a:
        r ^= b * (a & -a)  # a & -a isolates the lowest set bit, so this is b << k
        a &= a - 1
    return r


def reduce(v: int) -> int:
    """Reduce a polynomial of any degree modulo the fixed 128-bit polynomial."""
    while v >> 128:
        hi = v >> 128
        v = (v & MASK128) ^ hi ^ (hi << 1) ^ (hi << 2) ^ (hi << 7)
    return v


def mul(a: int, b: int) -> int:
    """Field multiplication."""
    return reduce(clmul(a, b))


def inv(a: int) -> int:
    """Multiplicative inverse of a nonzero element (extended Euclid on GF(2)[x])."""
    if not 0 < a <= MASK128:
        raise ValueError("inverse of zero (or out-of-range value) is undefined")
    r0, r1 = a, REDUCTION_POLY
    s0, s1 = 1, 0
    while r0 != 1:
        d = r0.bit_length() - r1.bit_length()
        if d < 0:
            r0, r1, s0, s1 = r1, r0, s1, s0
            d = -d
        r0 ^= r1 << d
        s0 ^= s1 << d
        if r0 == 0:
            raise ArithmeticError("gcd != 1; the reduction polynomial is not irreducible?")
    return reduce(s0)


def to_bytes(a: int) -> bytes:
    """Serialize a field element as 16 bytes little-endian."""
    return a.to_bytes(GF_BYTES, "little")


def from_bytes(raw: bytes) -> int:
    """Parse a 16-byte little-endian field element."""
    if len(raw) != GF_BYTES:
        raise ValueError(f"field element must be {GF_BYTES} bytes, got {len(raw)}")
    return int.from_bytes(raw, "little")


# ---------------------------------------------------------------------------
# mask values (out_B = 128 bits here, so the embedding is the identity)

def embed_mask(v: int) -> int:
    """Embed a mask value into a field element (zero-padding convention)."""
    return v & ((1 << B_BITS) - 1)


def truncate_mask(a: int) -> int:
    """Truncate a field element back to mask width."""
    return a & ((1 << B_BITS) - 1)


# ---------------------------------------------------------------------------
# 64-bit XOR values

def xor_bytes(a: bytes, b: bytes) -> bytes:
    """XOR two equal-length byte strings."""
    if len(a) != len(b):
        raise ValueError("xor of unequal lengths")
    return bytes(x ^ y for x, y in zip(a, b))


def xor_to_field(v: bytes) -> int:
    """Embed an 8-byte XOR value into a field element (low 64 bits)."""
    if len(v) != XOR_BYTES:
        raise ValueError(f"xor value must be {XOR_BYTES} bytes, got {len(v)}")
    return int.from_bytes(v, "little")


def field_to_xor(a: int) -> bytes:
    """Extract the low 8 bytes of a field element as an XOR value."""
    return (a & 0xFFFFFFFFFFFFFFFF).to_bytes(XOR_BYTES, "little")


# ---------------------------------------------------------------------------
# batch operations on (n, 2) uint64 limb arrays

def vec_zeros(n: int) -> np.ndarray:
    return np.zeros((n, 2), dtype=_LIMB)


def vec_from_ints(values) -> np.ndarray:
    """Build an (n, 2) limb array from an iterable of field elements."""
    out = np.empty((len(values), 2), dtype=_LIMB)
    for i, v in enumerate(values):
        out[i, 0] = v & 0xFFFFFFFFFFFFFFFF
        out[i, 1] = v >> 64
    return out


def vec_get(arr: np.ndarray, i: int) -> int:
    """Read one element of a limb array as an int."""
    return int(arr[i, 0]) | (int(arr[i, 1]) << 64)


def vec_to_bytes(arr: np.ndarray) -> bytes:
    """Serialize a limb array as concatenated 16-byte little-endian elements."""
    return np.ascontiguousarray(arr, dtype=_LIMB).tobytes()


def vec_from_bytes(raw: bytes) -> np.ndarray:
    """Parse concatenated 16-byte little-endian elements into a limb array."""
    if len(raw) % GF_BYTES:
        raise ValueError("vector byte length is not a multiple of 16")
    return np.frombuffer(raw, dtype=_LIMB).reshape(-1, 2).copy()


def vec_xor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a ^ b


def _reduce_lanes(lanes: np.ndarray) -> np.ndarray:
    """Reduce (n, 4) 256-bit lanes to (n, 2) field elements, vectorized."""
    n = lanes.shape[0]
    l0 = lanes[:, 0].copy()
    l1 = lanes[:, 1].copy()
    h0 = lanes[:, 2]
    h1 = lanes[:, 3]
    # fold H * x^128 = H * (x^7 + x^2 + x + 1); the product is at most 135 bits
    m0 = h0.copy()
    m1 = h1.copy()
    m2 = np.zeros(n, dtype=_LIMB)
    for k in (1, 2, 7):
        kk = np.uint64(k)
        rr = np.uint64(64 - k)
        m0 ^= h0 << kk
        m1 ^= (h1 << kk) | (h0 >> rr)
        m2 ^= h1 >> rr
    l0 ^= m0
    l1 ^= m1
    # the at-most-7-bit overflow folds once more without further carries
    l0 ^= m2 ^ (m2 << np.uint64(1)) ^ (m2 << np.uint64(2)) ^ (m2 << np.uint64(7))
    out = np.empty((n, 2), dtype=_LIMB)
    out[:, 0] = l0
    out[:, 1] = l1
    return out


def scalar_mul_vec(scalar: int, vec: np.ndarray) -> np.ndarray:
    """Multiply every element of an (n, 2) limb array by one field scalar.

    Packs the vector into a single big integer with 256-bit lanes; XOR of
    shifted copies then performs all n carry-less multiplications at once
    (shifts never cross a lane because each product fits in 255 bits).
    """
    n = vec.shape[0]
    if n == 0:
        return vec_zeros(0)
    scalar &= MASK128
    if scalar == 0:
        return vec_zeros(n)
    lanes = np.zeros((n, 4), dtype=_LIMB)
    lanes[:, 0] = vec[:, 0]
    lanes[:, 1] = vec[:, 1]
    packed = int.from_bytes(lanes.tobytes(), "little")
    acc = 0
    s = scalar
    while s:
        k = (s & -s).bit_length() - 1
        acc ^= packed << k
        s &= s - 1
    buf = acc.to_bytes(n * 32 + 32, "little")[: n * 32]
    prod = np.frombuffer(buf, dtype=_LIMB).reshape(n, 4)
    return _reduce_lanes(prod)
