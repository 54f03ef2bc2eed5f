"""Non-interactive SYN puzzle.

A client proves work by finding a 32-bit nonce (carried in the SYN's
Acknowledgment Number) such that ``H(src_ip | dst_ip | src_port | dst_port |
time_bucket | nonce)`` has at least ``d`` leading zero bits. Verification is a
single hash per accepted time bucket.
"""

from __future__ import annotations

import enum
import hashlib
import ipaddress
import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels

MAX_DIFFICULTY = 32
DEFAULT_BUCKET_WIDTH = 64.0  # seconds
NONCE_SPACE = 1 << 32
_M32 = 0xFFFFFFFF


class HashBackend(enum.Enum):
    SUPERFASTHASH32 = "superfasthash"
    CRYPTO_TRUNC32 = "sha256-trunc32"

    @classmethod
    def parse(cls, value: "str | HashBackend") -> "HashBackend":
        if isinstance(value, cls):
            return value
        for member in cls:
            if member.value == value or member.name.lower() == str(value).lower():
                return member
        raise ValueError(f"unknown hash backend {value!r}")


class SolverExhausted(RuntimeError):
    """All 2^32 nonces failed; the backend/difficulty pair is misconfigured."""


def ip_to_int(ip: "int | str") -> int:
    if isinstance(ip, str):
        return int(ipaddress.IPv4Address(ip))
    return int(ip) & _M32


def _check_difficulty(d: int) -> None:
    if not 0 <= d <= MAX_DIFFICULTY:
        raise ValueError(f"difficulty must be in 0..{MAX_DIFFICULTY}, got {d}")


@dataclass(frozen=True)
class PuzzleInput:
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    time_bucket: int

    def to_bytes(self) -> bytes:
        return struct.pack(
            ">IIHHI",
            self.src_ip,
            self.dst_ip,
            self.src_port,
            self.dst_port,
            self.time_bucket & _M32,
        )

    def words(self) -> tuple[int, int, int, int]:
        return (
            self.src_ip,
            self.dst_ip,
            (self.src_port << 16) | self.dst_port,
            self.time_bucket & _M32,
        )


@dataclass(frozen=True)
class SolveResult:
    nonce: int
    trials: int


def time_bucket(now: float, bucket_width: float) -> int:
    if bucket_width <= 0:
        raise ValueError("bucket_width must be positive")
    return int(now // bucket_width)


def build_puzzle_input(
    src_ip: "int | str",
    dst_ip: "int | str",
    src_port: int,
    dst_port: int,
    now: float,
    bucket_width: float = DEFAULT_BUCKET_WIDTH,
) -> PuzzleInput:
    return PuzzleInput(
        ip_to_int(src_ip),
        ip_to_int(dst_ip),
        int(src_port) & 0xFFFF,
        int(dst_port) & 0xFFFF,
        time_bucket(now, bucket_width),
    )


def superfasthash(data: bytes) -> int:
    """Paul Hsieh's SuperFastHash over arbitrary bytes (32-bit digest)."""
    n = len(data)
    if n == 0:
        return 0
    h = n
    rem = n & 3
    i = 0
    for _ in range(n >> 2):
        h = (h + (data[i] | (data[i + 1] << 8))) & _M32
        tmp = (((data[i + 2] | (data[i + 3] << 8)) << 11) ^ h) & _M32
        h = ((h << 16) & _M32) ^ tmp
        h = (h + (h >> 11)) & _M32
        i += 4
    if rem == 3:
        h = (h + (data[i] | (data[i + 1] << 8))) & _M32
        h ^= (h << 16) & _M32
        h ^= (_signed_byte(data[i + 2]) << 18) & _M32
        h = (h + (h >> 11)) & _M32
    elif rem == 2:
        h = (h + (data[i] | (data[i + 1] << 8))) & _M32
        h ^= (h << 11) & _M32
        h = (h + (h >> 17)) & _M32
    elif rem == 1:
        h = (h + _signed_byte(data[i])) & _M32
        h ^= (h << 10) & _M32
        h = (h + (h >> 1)) & _M32
    h ^= (h << 3) & _M32
    h = (h + (h >> 5)) & _M32
    h ^= (h << 4) & _M32
    h = (h + (h >> 17)) & _M32
    h ^= (h << 25) & _M32
    h = (h + (h >> 6)) & _M32
    return h


def _signed_byte(b: int) -> int:
    return b - 256 if b > 127 else b


def crypto_trunc32(data: bytes) -> int:
    return int.from_bytes(hashlib.sha256(data).digest()[:4], "big")


def digest_bytes(data: bytes, backend: HashBackend) -> int:
    if backend is HashBackend.SUPERFASTHASH32:
        return superfasthash(data)
    return crypto_trunc32(data)


def puzzle_hash(inp: PuzzleInput, nonce: int, backend: HashBackend) -> int:
    """Digest of the serialized input with the nonce appended big-endian."""
    return digest_bytes(inp.to_bytes() + struct.pack(">I", nonce & _M32), backend)


def meets_difficulty(digest: int, d: int) -> bool:
    _check_difficulty(d)
    if d == 0:
        return True
    return (digest & _M32) >> (32 - d) == 0


def expected_trials(d: int) -> int:
    _check_difficulty(d)
    return 1 << d


def solve(
    inp: PuzzleInput,
    d: int,
    backend: HashBackend = HashBackend.SUPERFASTHASH32,
    start_nonce: int = 0,
) -> SolveResult:
    """Search nonces sequentially from ``start_nonce`` (mod 2^32)."""
    _check_difficulty(d)
    start = start_nonce & _M32
    if backend is HashBackend.SUPERFASTHASH32:
        h = int(_kernels.sfh_prefix(*inp.words()))
        nonce, trials = _kernels.sfh_search(h, start, d, NONCE_SPACE)
        if nonce < 0:
            raise SolverExhausted(f"no nonce meets d={d} for {inp}")
        return SolveResult(int(nonce), int(trials))

    base = hashlib.sha256(inp.to_bytes())
    shift = 32 - d
    nonce = start
    for trials in range(1, NONCE_SPACE + 1):
        h = base.copy()
        h.update(nonce.to_bytes(4, "big"))
        if d == 0 or int.from_bytes(h.digest()[:4], "big") >> shift == 0:
            return SolveResult(nonce, trials)
        nonce = (nonce + 1) & _M32
    raise SolverExhausted(f"no nonce meets d={d} for {inp}")


def verify(
    src_ip: "int | str",
    dst_ip: "int | str",
    src_port: int,
    dst_port: int,
    nonce: int,
    d: int,
    backend: HashBackend,
    now: float,
    bucket_width: float = DEFAULT_BUCKET_WIDTH,
    allowed_buckets: tuple[str, ...] = ("current", "previous"),
) -> bool:
    """True iff the nonce meets ``d`` for the current or the previous bucket."""
    _check_difficulty(d)
    if d == 0:
        return True
    inp = build_puzzle_input(src_ip, dst_ip, src_port, dst_port, now, bucket_width)
    buckets = []
    if "current" in allowed_buckets:
        buckets.append(inp.time_bucket)
    if "previous" in allowed_buckets and inp.time_bucket > 0:
        buckets.append(inp.time_bucket - 1)
    for b in buckets:
        candidate = PuzzleInput(inp.src_ip, inp.dst_ip, inp.src_port, inp.dst_port, b)
        if meets_difficulty(puzzle_hash(candidate, nonce, backend), d):
            return True
    return False


def verify_many(
    src_ip: np.ndarray,
    dst_ip: np.ndarray,
    src_port: np.ndarray,
    dst_port: np.ndarray,
    nonce: np.ndarray,
    d: np.ndarray,
    backend: HashBackend,
    bucket: np.ndarray,
    claim: "np.ndarray | None" = None,
    use_previous: bool = True,
) -> np.ndarray:
    """Array form of :func:`verify`, with the time bucket precomputed per packet.

    ``claim`` carries a modeled proof difficulty (or -1) for packets whose
    solve was sampled rather than computed; a claim >= d passes.
    """
    n = len(src_ip)

    def col(x):  # writable contiguous int64 column, scalars broadcast
        a = np.asarray(x, np.int64)
        if a.shape == (n,) and a.flags.c_contiguous and a.flags.writeable:
            return a
        return np.full(n, a, np.int64) if a.ndim == 0 else np.array(np.broadcast_to(a, (n,)))

    src = col(src_ip)
    dst = col(dst_ip)
    ports = (col(src_port) << 16) | col(dst_port)
    nonce = col(nonce)
    d = col(d)
    bucket = col(bucket)
    claim = np.full(n, -1, np.int64) if claim is None else col(claim)
    if backend is HashBackend.SUPERFASTHASH32:
        return _kernels.sfh_verify(src, dst, ports, bucket, nonce, d, claim, use_previous)
    ok = np.zeros(n, bool)
    for i in range(n):
        di = int(d[i])
        if di <= 0 or claim[i] >= di:
            ok[i] = True
            continue
        b = int(bucket[i])
        sport, dport = int(ports[i]) >> 16, int(ports[i]) & 0xFFFF
        for bb in (b, b - 1) if use_previous and b > 0 else (b,):
            inp = PuzzleInput(int(src[i]), int(dst[i]), sport, dport, bb)
            if meets_difficulty(puzzle_hash(inp, int(nonce[i]), backend), di):
                ok[i] = True
                break
    return ok


def hash_many(
    w0: np.ndarray, w1: np.ndarray, w2: np.ndarray, w3: np.ndarray, w4: np.ndarray
) -> np.ndarray:
    """SuperFastHash of many 20-byte messages given as five big-endian words."""
    arrs = np.broadcast_arrays(*(np.asarray(w, np.int64) for w in (w0, w1, w2, w3, w4)))
    return _kernels.sfh_words(*(np.array(a) for a in arrs))


def sample_trials(rng: np.random.Generator, d: int) -> int:
    """Trials to first success when each trial passes with probability 2^-d."""
    _check_difficulty(d)
    if d == 0:
        return 1
    return int(rng.geometric(2.0 ** -d))
