"""Independent reference implementations used to cross-check the package.

Written from the published algorithm descriptions, sharing no code with
``synpow``: SuperFastHash is expressed with ``struct`` 16-bit little-endian
reads as in Hsieh's C reference (``get16bits``), the puzzle input is packed
field by field, and the cost model is plain arithmetic.
"""

from __future__ import annotations

import hashlib
import struct

MASK = 0xFFFFFFFF


def sfh(data: bytes) -> int:
    length = len(data)
    if length == 0:
        return 0
    h = length
    rem = length % 4
    body = length - rem
    for off in range(0, body, 4):
        lo, hi = struct.unpack_from("<HH", data, off)
        h = (h + lo) & MASK
        tmp = ((hi << 11) ^ h) & MASK
        h = ((h << 16) ^ tmp) & MASK
        h = (h + (h >> 11)) & MASK
    tail = data[body:]
    if rem == 3:
        h = (h + struct.unpack("<H", tail[:2])[0]) & MASK
        h = (h ^ (h << 16)) & MASK
        # C reference reads the last byte as a (signed) char
        h = (h ^ ((struct.unpack("b", tail[2:3])[0] << 18) & MASK)) & MASK
        h = (h + (h >> 11)) & MASK
    elif rem == 2:
        h = (h + struct.unpack("<H", tail)[0]) & MASK
        h = (h ^ (h << 11)) & MASK
        h = (h + (h >> 17)) & MASK
    elif rem == 1:
        h = (h + struct.unpack("b", tail)[0]) & MASK
        h = (h ^ (h << 10)) & MASK
        h = (h + (h >> 1)) & MASK
    for op, k in (("x", 3), ("a", 5), ("x", 4), ("a", 17), ("x", 25), ("a", 6)):
        if op == "x":
            h = (h ^ (h << k)) & MASK
        else:
            h = (h + (h >> k)) & MASK
    return h


def sha_trunc(data: bytes) -> int:
    return struct.unpack(">I", hashlib.sha256(data).digest()[:4])[0]


def puzzle_bytes(src: int, dst: int, sport: int, dport: int, bucket: int, nonce: int) -> bytes:
    return (
        src.to_bytes(4, "big") + dst.to_bytes(4, "big") + sport.to_bytes(2, "big")
        + dport.to_bytes(2, "big") + (bucket & MASK).to_bytes(4, "big") + (nonce & MASK).to_bytes(4, "big")
    )


def leading_zeros32(x: int) -> int:
    return 32 - x.bit_length()


def brute_solve(hash_fn, src, dst, sport, dport, bucket, d, start=0):
    """First nonce at or after ``start`` with >= d leading zero bits; (nonce, trials)."""
    n = start
    trials = 0
    while True:
        trials += 1
        if leading_zeros32(hash_fn(puzzle_bytes(src, dst, sport, dport, bucket, n))) >= d:
            return n, trials
        n = (n + 1) & MASK


def cost_row(hash_rate: float, d: int, rates=(0.2, 1.0, 5.0)):
    t = 2 ** d / hash_rate
    return t, [min(1.0, r * t) * 100 for r in rates]
