"""Simulated wire units: single packets and equal-size bursts."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Kind(enum.IntEnum):
    SYN = 0
    SYN_ACK = 1
    ACK = 2
    REQUEST = 3
    RESPONSE = 4
    RST = 5


SIZE_BYTES = {
    Kind.SYN: 40,
    Kind.SYN_ACK: 40,
    Kind.ACK: 40,
    Kind.RST: 40,
    Kind.REQUEST: 140,
    Kind.RESPONSE: 1064,
}

NO_CLAIM = -1


@dataclass(slots=True, eq=False)
class Packet:
    """One TCP segment. For SYNs ``ack`` carries the PoW nonce.

    ``pow_claim`` is the difficulty of a modeled (sampled, not computed) proof,
    or -1 when the nonce is the only evidence.
    """

    kind: Kind
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    seq: int = 0
    ack: int = 0
    size: int = 0
    pow_claim: int = NO_CLAIM
    attack: bool = False

    def __post_init__(self) -> None:
        if self.size == 0:
            self.size = SIZE_BYTES[self.kind]

    @property
    def nonce(self) -> int:
        if self.kind is not Kind.SYN:
            raise AttributeError("only SYNs carry a nonce")
        return self.ack


@dataclass(slots=True, eq=False)
class Burst:
    """Many same-kind, same-size packets as parallel int64 arrays.

    ``t`` are arrival times at the current hop (sorted); ``t_lo`` is a lower
    bound on them used as the event time.
    """

    kind: Kind
    t: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    sport: np.ndarray
    dport: np.ndarray
    seq: np.ndarray
    ack: np.ndarray
    claim: np.ndarray
    t_lo: int
    size: int = field(default=40)

    _FIELDS = ("t", "src", "dst", "sport", "dport", "seq", "ack", "claim")

    @property
    def n(self) -> int:
        return len(self.t)

    def take(self, idx: np.ndarray) -> "Burst":
        return Burst(
            self.kind,
            *(getattr(self, f)[idx] for f in self._FIELDS),
            t_lo=self.t_lo,
            size=self.size,
        )

    def copy(self) -> "Burst":
        return self.take(slice(None))

    @classmethod
    def concat(cls, bursts: "list[Burst]") -> "Burst":
        first = bursts[0]
        if len(bursts) == 1:
            return first
        arrays = [np.concatenate([getattr(b, f) for b in bursts]) for f in cls._FIELDS]
        order = np.argsort(arrays[0], kind="stable")
        return Burst(
            first.kind,
            *(a[order] for a in arrays),
            t_lo=min(b.t_lo for b in bursts),
            size=first.size,
        )

    @classmethod
    def empty(cls, kind: Kind, t_lo: int) -> "Burst":
        z = np.empty(0, np.int64)
        return cls(kind, z, z, z, z, z, z, z, z, t_lo=t_lo, size=SIZE_BYTES[kind])
