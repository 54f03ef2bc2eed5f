"""SYN flood sources.

High-rate floods are emitted in per-millisecond batches (one Burst per batch)
so the event queue stays small; packet times inside a batch keep the exact
schedule.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np

from .edge import Prefix
from .packets import NO_CLAIM, SIZE_BYTES, Burst, Kind, Packet
from .protocol import Host
from .sim_engine import NS, Simulator

log = logging.getLogger(__name__)

BATCH_NS = 1_000_000
CURL_MAX_RATE = 1000.0
M32 = 0xFFFFFFFF


class Variant(enum.Enum):
    CURL_FLOOD = "curl"
    CFLOOD = "cflood"
    CFLOOD_SPOOFED = "cflood-spoof"


class NoncePolicy(enum.Enum):
    ZERO = "zero"
    RANDOM = "random"


@dataclass
class AttackProfile:
    variant: Variant
    rate: float  # packets/s (connections/s for curl)
    start_at: float  # seconds
    stop_at: float  # seconds
    spoof_space: "Prefix | None" = None
    nonce_policy: NoncePolicy = NoncePolicy.ZERO
    spacing: str = "deterministic"  # or "poisson"
    curl_timeout: float = 0.1
    attacker_solves_at: "int | None" = None
    attacker_hash_rate: float = 2e8

    def validate(self) -> list[str]:
        errs = []
        if self.rate <= 0:
            errs.append("rate must be > 0")
        if self.variant is Variant.CURL_FLOOD and self.rate > CURL_MAX_RATE:
            errs.append(f"curl flood rate must be <= {CURL_MAX_RATE:g}/s")
        if self.variant is Variant.CFLOOD_SPOOFED and self.spoof_space is None:
            errs.append("spoofed flood needs spoof_space")
        if self.stop_at <= self.start_at:
            errs.append("stop_at must be after start_at")
        if self.spacing not in ("deterministic", "poisson"):
            errs.append("spacing must be 'deterministic' or 'poisson'")
        if self.attacker_solves_at is not None and not 0 <= self.attacker_solves_at <= 32:
            errs.append("attacker_solves_at must be in 0..32")
        return errs

    @property
    def effective_rate(self) -> float:
        """Emission rate after the attacker's own solving budget, if it solves."""
        if self.attacker_solves_at is None:
            return self.rate
        return min(self.rate, self.attacker_hash_rate / 2.0 ** self.attacker_solves_at)


class FloodAttacker(Host):
    """Raw SYN generator (CFlood, optionally spoofed). Ignores all responses.

    ``phase_ns`` shifts this source's schedule so several sources interleave.
    """

    def __init__(
        self,
        sim: Simulator,
        name: str,
        ip: int,
        server_ip: int,
        server_port: int,
        profile: AttackProfile,
        rng: np.random.Generator,
        phase_ns: int = 0,
    ) -> None:
        super().__init__(sim, name, ip)
        self.server_ip = server_ip
        self.server_port = server_port
        self.profile = profile
        self.rng = rng
        self.phase_ns = int(phase_ns)
        self.rate = profile.effective_rate
        self.period = NS / self.rate
        self.start_ns = int(round(profile.start_at * NS))
        self.stop_ns = int(round(profile.stop_at * NS))
        self.emitted = 0
        self.received = 0
        self._next_i = 0

    def start(self) -> None:
        if self.stop_ns > self.start_ns:
            self.sim.schedule(max(self.start_ns, self.sim.now), self._batch)

    def _times(self, t0: int, t1: int) -> np.ndarray:
        if self.profile.spacing == "poisson":
            n = int(self.rng.poisson(self.rate * (t1 - t0) / NS))
            return np.sort(self.rng.integers(t0, t1, size=n, dtype=np.int64))
        base = self.start_ns + self.phase_ns
        i_hi = max(self._next_i, math.ceil((t1 - base) / self.period))
        idx = np.arange(self._next_i, i_hi, dtype=np.int64)
        self._next_i = i_hi
        return base + np.floor(idx * self.period).astype(np.int64)

    def _sources(self, n: int) -> np.ndarray:
        sp = self.profile.spoof_space
        if self.profile.variant is not Variant.CFLOOD_SPOOFED or sp is None:
            return np.full(n, self.ip, np.int64)
        return sp.network + self.rng.integers(0, 1 << (32 - sp.length), size=n, dtype=np.int64)

    def make_burst(self, t: np.ndarray, t_lo: int) -> Burst:
        n = len(t)
        rng = self.rng
        if self.profile.nonce_policy is NoncePolicy.RANDOM:
            nonce = rng.integers(0, 1 << 32, size=n, dtype=np.int64)
        else:
            nonce = np.zeros(n, np.int64)
        claim = self.profile.attacker_solves_at
        return Burst(
            Kind.SYN,
            t=t,
            src=self._sources(n),
            dst=np.full(n, self.server_ip, np.int64),
            sport=rng.integers(1024, 65536, size=n, dtype=np.int64),
            dport=np.full(n, self.server_port, np.int64),
            seq=rng.integers(0, 1 << 32, size=n, dtype=np.int64),
            ack=nonce,
            claim=np.full(n, NO_CLAIM if claim is None else claim, np.int64),
            t_lo=t_lo,
            size=SIZE_BYTES[Kind.SYN],
        )

    def _batch(self) -> None:
        t0 = self.sim.now
        t1 = min(t0 + BATCH_NS - t0 % BATCH_NS, self.stop_ns)
        t = self._times(t0, t1)
        t = t[(t >= t0) & (t < t1)]
        if len(t):
            self.emitted += len(t)
            self.out.transmit_burst(self.make_burst(t, t0))
        if t1 < self.stop_ns:
            self.sim.schedule(t1, self._batch)

    def receive(self, pkt: Packet, channel) -> None:
        self.received += 1

    def receive_burst(self, burst: Burst, channel) -> None:
        self.received += burst.n


class CurlAttacker(Host):
    """Low-rate connection flood: opens connections without PoW and abandons
    each one after a short timeout."""

    def __init__(
        self,
        sim: Simulator,
        name: str,
        ip: int,
        server_ip: int,
        server_port: int,
        profile: AttackProfile,
        rng: np.random.Generator,
        phase_ns: int = 0,
    ) -> None:
        super().__init__(sim, name, ip)
        self.server_ip = server_ip
        self.server_port = server_port
        self.profile = profile
        self.rng = rng
        self.interval_ns = max(1, int(round(NS / profile.effective_rate)))
        self.timeout_ns = int(round(profile.curl_timeout * NS))
        self.start_ns = int(round(profile.start_at * NS)) + int(phase_ns)
        self.stop_ns = int(round(profile.stop_at * NS))
        self.emitted = 0
        self.handshakes = 0
        self.received = 0
        self._open: dict[int, tuple[int, int]] = {}  # sport -> (isn, deadline)
        self._port = int(rng.integers(1024, 65536))

    def start(self) -> None:
        if self.start_ns < self.stop_ns:
            self.sim.schedule(max(self.start_ns, self.sim.now), self._connect)

    def _connect(self) -> None:
        now = self.sim.now
        self._port = 1024 if self._port >= 65535 else self._port + 1
        isn = int(self.rng.integers(0, 1 << 32))
        d = self.profile.attacker_solves_at
        self._open[self._port] = (isn, now + self.timeout_ns)
        self.emitted += 1
        self.send(
            Packet(Kind.SYN, self.ip, self.server_ip, self._port, self.server_port, isn, 0,
                   pow_claim=NO_CLAIM if d is None else d, attack=True)
        )
        nxt = now + self.interval_ns
        if nxt < self.stop_ns:
            self.sim.schedule(nxt, self._connect)

    def receive(self, pkt: Packet, channel) -> None:
        self.received += 1
        entry = self._open.pop(pkt.dst_port, None)
        if entry is None or pkt.kind is not Kind.SYN_ACK:
            return
        isn, deadline = entry
        if self.sim.now > deadline or pkt.ack != (isn + 1) & M32:
            return
        seq, ack = (isn + 1) & M32, (pkt.seq + 1) & M32
        self.handshakes += 1
        self.send(Packet(Kind.ACK, self.ip, self.server_ip, pkt.dst_port, self.server_port, seq, ack, attack=True))
        self.send(Packet(Kind.REQUEST, self.ip, self.server_ip, pkt.dst_port, self.server_port, seq, ack, attack=True))

    def receive_burst(self, burst: Burst, channel) -> None:
        self.received += burst.n


def make_attacker(sim, name, ip, server_ip, server_port, profile, rng, phase_ns=0) -> Host:
    cls = CurlAttacker if profile.variant is Variant.CURL_FLOOD else FloodAttacker
    return cls(sim, name, ip, server_ip, server_port, profile, rng, phase_ns)
