"""TCP handshake endpoints: PoW-stamping clients and the server in three modes.

Clients are synchronous: one connection per transaction (SYN, ACK, REQUEST
up; SYN-ACK, RESPONSE down) and at most one transaction in flight.
"""

from __future__ import annotations

import enum
import heapq
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import pow_core
from .packets import SIZE_BYTES, Burst, Kind, Packet, NO_CLAIM
from .pow_core import HashBackend
from .sim_engine import NS, Simulator

log = logging.getLogger(__name__)

M32 = 0xFFFFFFFF
COOKIE_HASH_BITS = 26
_COOKIE_MASK = (1 << COOKIE_HASH_BITS) - 1


@dataclass(frozen=True)
class DeviceClass:
    name: str
    hash_rate: float  # hashes per second
    t_budget: float = 0.5  # max acceptable solve time per connection, seconds

    def __post_init__(self) -> None:
        if not self.hash_rate > 0:
            raise ValueError(f"device {self.name}: hash_rate must be > 0")


DEVICE_CLASSES = {
    "iot_mcu": DeviceClass("iot_mcu", 1e6, 0.5),
    "rpi4": DeviceClass("rpi4", 3e7, 0.5),
    "phone": DeviceClass("phone", 5e7, 0.35),
    "laptop": DeviceClass("laptop", 2e8, 0.1),
}


class Node:
    """Anything a channel can deliver to."""

    name: str

    def receive(self, pkt: Packet, channel) -> None:  # pragma: no cover - interface
        raise NotImplementedError

    def receive_burst(self, burst: Burst, channel) -> None:  # pragma: no cover - interface
        raise NotImplementedError


class Host(Node):
    def __init__(self, sim: Simulator, name: str, ip: int) -> None:
        self.sim = sim
        self.name = name
        self.ip = ip
        self.out = None  # Channel toward the edge switch, set when wired

    def send(self, pkt: Packet) -> bool:
        return self.out.transmit(pkt)


# ---------------------------------------------------------------- clients


@dataclass
class ClientStats:
    attempts: int = 0
    successes: int = 0
    solve_delay_sum: float = 0.0
    solve_delay_n: int = 0
    latencies: list = field(default_factory=list)


class Client(Host):
    """Synchronous transaction loop with PoW-stamped SYNs.

    Counters only cover transactions that finish inside ``window`` (ns).
    """

    def __init__(
        self,
        sim: Simulator,
        name: str,
        ip: int,
        lan: str,
        server_ip: int,
        server_port: int,
        device: DeviceClass,
        rng: np.random.Generator,
        window: tuple[int, int],
        d_default: int = 0,
        ladder: "list[int] | None" = None,
        d_max: int = 26,
        timeout_s: float = 1.0,
        think_time_s: float = 0.0,
        think_jitter: float = 0.0,
        backend: HashBackend = HashBackend.SUPERFASTHASH32,
        bucket_width: float = pow_core.DEFAULT_BUCKET_WIDTH,
        real_solve_max_d: int = 16,
        request_bytes: int = SIZE_BYTES[Kind.REQUEST],
    ) -> None:
        super().__init__(sim, name, ip)
        self.lan = lan
        self.server_ip = server_ip
        self.server_port = server_port
        self.device = device
        self.rng = rng
        self.window = window
        self.d_default = d_default
        self.d_max = max(d_max, d_default)
        ladder = sorted({d_default, *(ladder or [])})
        self.ladder = [min(max(d, d_default), self.d_max) for d in ladder]
        self.belief = d_default
        self.timeout_ns = int(round(timeout_s * NS))
        self.think_ns = int(round(think_time_s * NS))
        self.think_jitter = think_jitter
        self.backend = backend
        self.bucket_width = bucket_width
        self.real_solve_max_d = real_solve_max_d
        self.request_bytes = request_bytes
        self.stats = ClientStats()
        self._tx = 0
        self._state = "idle"
        self._sport = 0
        self._isn = 0
        self._syn_at = 0
        self._next_port = int(rng.integers(32768, 61000))

    # -- helpers
    @property
    def in_flight(self) -> int:
        return 0 if self._state == "idle" else 1

    def _in_window(self, t: int) -> bool:
        return self.window[0] <= t < self.window[1]

    def _port(self) -> int:
        p = self._next_port
        self._next_port = 32768 if p >= 60999 else p + 1
        return p

    def advise(self, d: int) -> None:
        """Out-of-band difficulty notice for this client's prefix."""
        self.belief = min(max(int(d), self.d_default), self.d_max)

    def escalate(self) -> None:
        higher = [d for d in self.ladder if d > self.belief]
        if higher:
            self.belief = higher[0]

    def solve_for(self, d: int, sport: int, now_s: float) -> tuple[int, int, int]:
        """Returns (nonce, trials, claim) for a SYN from ``sport``."""
        if d <= self.real_solve_max_d:
            inp = pow_core.build_puzzle_input(
                self.ip, self.server_ip, sport, self.server_port, now_s, self.bucket_width
            )
            res = pow_core.solve(inp, d, self.backend, int(self.rng.integers(0, 1 << 32)))
            return res.nonce, res.trials, NO_CLAIM
        # sampled solve: same trial-count law, proof carried as a claim
        trials = pow_core.sample_trials(self.rng, d)
        return int(self.rng.integers(0, 1 << 32)), trials, d

    # -- transaction lifecycle
    def start(self) -> None:
        if self._state != "idle":
            raise RuntimeError(f"{self.name}: transaction already in flight")
        self._tx += 1
        self._state = "solving"
        now = self.sim.now
        self._sport = self._port()
        self._isn = int(self.rng.integers(0, 1 << 32))
        nonce, trials, claim = self.solve_for(self.belief, self._sport, now / NS)
        solve_ns = max(1, int(round(trials / self.device.hash_rate * NS)))
        self.sim.schedule(now + solve_ns, self._emit_syn, self._tx, nonce, claim, solve_ns)

    def _emit_syn(self, tx: int, nonce: int, claim: int, solve_ns: int) -> None:
        if tx != self._tx:
            return
        now = self.sim.now
        if self._in_window(now):
            self.stats.solve_delay_sum += solve_ns / NS
            self.stats.solve_delay_n += 1
        self._state = "syn_sent"
        self._syn_at = now
        self.send(
            Packet(Kind.SYN, self.ip, self.server_ip, self._sport, self.server_port,
                   seq=self._isn, ack=nonce, pow_claim=claim)
        )
        self.sim.schedule(now + self.timeout_ns, self._on_timeout, tx)

    def receive(self, pkt: Packet, channel) -> None:
        if pkt.dst_port != self._sport or pkt.src_ip != self.server_ip:
            return
        if pkt.kind is Kind.SYN_ACK and self._state == "syn_sent":
            if pkt.ack != (self._isn + 1) & M32:
                return
            seq = (self._isn + 1) & M32
            ack = (pkt.seq + 1) & M32
            self.send(Packet(Kind.ACK, self.ip, self.server_ip, self._sport, self.server_port, seq, ack))
            self.send(
                Packet(Kind.REQUEST, self.ip, self.server_ip, self._sport, self.server_port,
                       seq, ack, size=self.request_bytes)
            )
            self._state = "requested"
        elif pkt.kind is Kind.RESPONSE and self._state == "requested":
            self._finish(True)

    def receive_burst(self, burst: Burst, channel) -> None:
        pass  # stray SYN-ACKs for spoofed addresses that collide with ours

    def _on_timeout(self, tx: int) -> None:
        if tx != self._tx or self._state in ("idle", "solving"):
            return
        self.escalate()  # before the next transaction picks its difficulty
        self._finish(False)

    def _finish(self, ok: bool) -> None:
        now = self.sim.now
        if self._in_window(now):
            self.stats.attempts += 1
            if ok:
                self.stats.successes += 1
                self.stats.latencies.append((now - self._syn_at) / NS)
        self._state = "idle"
        self._tx += 1  # invalidates the pending timeout
        if ok and self.think_ns:
            think = self.think_ns
            if self.think_jitter:
                think = int(think * self.rng.uniform(1 - self.think_jitter, 1 + self.think_jitter))
            self.sim.schedule(now + think, self.start)
        else:
            self.start()


# ---------------------------------------------------------------- server


class ServerMode(enum.Enum):
    PLAIN_BACKLOG = "plain"
    SYN_COOKIES = "syncookies"
    POW_AWARE = "pow"


def cookie_values(src, dst, sport, dport, bucket, secret: int) -> np.ndarray:
    """SYN-cookie ISN: 6 bits of time bucket over a 26-bit keyed hash."""
    bucket = np.asarray(bucket, np.int64)
    ports = (np.asarray(sport, np.int64) << 16) | np.asarray(dport, np.int64)
    h = pow_core.hash_many(src, dst, ports, bucket & M32, np.int64(secret & M32))
    return ((bucket & 63) << COOKIE_HASH_BITS) | (h & _COOKIE_MASK)


def cookie_value(src: int, dst: int, sport: int, dport: int, bucket: int, secret: int) -> int:
    return int(cookie_values([src], [dst], [sport], [dport], [bucket], secret)[0])


def cookie_check(src: int, dst: int, sport: int, dport: int, ack: int, bucket: int, secret: int) -> bool:
    """Valid iff ack-1 is the cookie for the current or the previous bucket."""
    c = (ack - 1) & M32
    for b in (bucket, bucket - 1):
        if b < 0 or (c >> COOKIE_HASH_BITS) != (b & 63):
            continue
        if cookie_value(src, dst, sport, dport, b, secret) == c:
            return True
    return False


@dataclass
class ServerStats:
    syns_received: int = 0
    syns_dropped_backlog: int = 0
    synacks_sent: int = 0
    handshakes: int = 0
    requests: int = 0
    responses: int = 0
    max_half_open: int = 0
    cookie_failures: int = 0


class Server(Host):
    """Handshake and request handling.

    PlainBacklog keeps half-open entries up to ``backlog``; peers that have
    completed a handshake before ("proven") may use the last
    ``proven_reserve`` fraction of it, unproven SYNs only the rest. PowAware
    behaves like PlainBacklog; filtering happened at the edge.
    """

    def __init__(
        self,
        sim: Simulator,
        name: str,
        ip: int,
        port: int,
        mode: ServerMode,
        rng: np.random.Generator,
        backlog: int = 1024,
        proven_reserve: float = 0.25,
        half_open_timeout_s: float = 3.0,
        service_time_s: float = 0.002,
        cpus: int = 8,
        cookie_cost_s: float = 5e-6,
        cookie_bucket_width: float = pow_core.DEFAULT_BUCKET_WIDTH,
        response_bytes: int = SIZE_BYTES[Kind.RESPONSE],
    ) -> None:
        super().__init__(sim, name, ip)
        self.port = port
        self.mode = mode
        self.rng = rng
        self.backlog = backlog
        self.unproven_limit = backlog - int(backlog * proven_reserve)
        self.half_open_ns = int(round(half_open_timeout_s * NS))
        self.service_ns = int(round(service_time_s * NS))
        self.cookie_ns = int(round(cookie_cost_s * NS))
        self.cookie_bucket_width = cookie_bucket_width
        self.response_bytes = response_bytes
        self.secret = int(rng.integers(0, 1 << 32))
        self.stats = ServerStats()
        self._half_open: dict[tuple[int, int], tuple[int, int]] = {}
        self._expiry: deque = deque()  # (expires, key or None, count)
        self._half_open_count = 0
        self._proven: set[int] = set()
        self._established: set[tuple[int, int]] = set()
        self._cpu_free = [0] * cpus
        heapq.heapify(self._cpu_free)
        self._lane_free = 0

    @property
    def half_open(self) -> int:
        self._expire(self.sim.now)
        return self._half_open_count

    def _expire(self, now: int) -> None:
        q = self._expiry
        while q and q[0][0] <= now:
            exp, key, count = q.popleft()
            if key is None:
                self._half_open_count -= count
            elif self._half_open.get(key, (None, None))[1] == exp:
                del self._half_open[key]
                self._half_open_count -= 1

    def _bucket(self, now: int) -> int:
        return int((now / NS) // self.cookie_bucket_width)

    def _lane(self, now: int) -> int:
        self._lane_free = max(self._lane_free, now) + self.cookie_ns
        return self._lane_free

    # -- single packets
    def receive(self, pkt: Packet, channel) -> None:
        k = pkt.kind
        if k is Kind.SYN:
            self._on_syn(pkt)
        elif k is Kind.ACK:
            self._on_ack(pkt)
        elif k is Kind.REQUEST:
            self._on_request(pkt)

    def _on_syn(self, pkt: Packet) -> None:
        now = self.sim.now
        self.stats.syns_received += 1
        key = (pkt.src_ip, pkt.src_port)
        if self.mode is ServerMode.SYN_COOKIES:
            isn = cookie_value(pkt.src_ip, pkt.dst_ip, pkt.src_port, pkt.dst_port, self._bucket(now), self.secret)
            self.sim.schedule(self._lane(now), self._send_synack, pkt, isn)
            return
        self._expire(now)
        limit = self.backlog if pkt.src_ip in self._proven else self.unproven_limit
        if key in self._half_open:
            isn = self._half_open[key][0]
        elif self._half_open_count >= limit:
            self.stats.syns_dropped_backlog += 1
            return
        else:
            isn = int(self.rng.integers(0, 1 << 32))
            exp = now + self.half_open_ns
            self._half_open[key] = (isn, exp)
            self._expiry.append((exp, key, 1))
            self._half_open_count += 1
            self.stats.max_half_open = max(self.stats.max_half_open, self._half_open_count)
        self._send_synack(pkt, isn)

    def _send_synack(self, syn: Packet, isn: int) -> None:
        self.stats.synacks_sent += 1
        self.send(Packet(Kind.SYN_ACK, self.ip, syn.src_ip, self.port, syn.src_port, isn, (syn.seq + 1) & M32))

    def _on_ack(self, pkt: Packet) -> bool:
        """Completes a handshake; True if the connection is now established."""
        now = self.sim.now
        key = (pkt.src_ip, pkt.src_port)
        if self.mode is ServerMode.SYN_COOKIES:
            ok = cookie_check(pkt.src_ip, pkt.dst_ip, pkt.src_port, pkt.dst_port, pkt.ack,
                              self._bucket(now), self.secret)
            if not ok:
                self.stats.cookie_failures += 1
                return False
        else:
            self._expire(now)
            entry = self._half_open.get(key)
            if entry is None or pkt.ack != (entry[0] + 1) & M32:
                return False
            del self._half_open[key]
            self._half_open_count -= 1
        self._established.add(key)
        self._proven.add(pkt.src_ip)
        self.stats.handshakes += 1
        return True

    def _on_request(self, pkt: Packet) -> None:
        key = (pkt.src_ip, pkt.src_port)
        # a data segment carries the handshake ACK too, so it completes a
        # handshake whose bare ACK was lost
        if key not in self._established and not self._on_ack(pkt):
            return
        self._established.discard(key)
        self.stats.requests += 1
        free = heapq.heappop(self._cpu_free)
        fin = max(free, self.sim.now) + self.service_ns
        heapq.heappush(self._cpu_free, fin)
        self.sim.schedule(fin, self._respond, pkt)

    def _respond(self, req: Packet) -> None:
        self.stats.responses += 1
        self.send(
            Packet(Kind.RESPONSE, self.ip, req.src_ip, self.port, req.src_port,
                   req.ack, (req.seq + req.size) & M32, size=self.response_bytes)
        )

    # -- attack bursts (SYNs only)
    def receive_burst(self, burst: Burst, channel) -> None:
        if burst.kind is not Kind.SYN or burst.n == 0:
            return
        now = self.sim.now
        n = burst.n
        self.stats.syns_received += n
        if self.mode is ServerMode.SYN_COOKIES:
            isn = cookie_values(burst.src, burst.dst, burst.sport, burst.dport, self._bucket(now), self.secret)
            # serialized cookie lane: fin_i = max(fin_{i-1}, a_i) + c
            # unrolled: fin_i = (i+1)c + max(lane_free, max_{j<=i}(a_j - j c))
            c = self.cookie_ns
            j = np.arange(n, dtype=np.int64)
            base = np.maximum.accumulate(burst.t - c * j)
            t_out = np.maximum(base, self._lane_free) + c * (j + 1)
            self._lane_free = int(t_out[-1])
            out = burst
        else:
            self._expire(now)
            free = max(0, self.unproven_limit - self._half_open_count)
            k = min(free, n)
            self.stats.syns_dropped_backlog += n - k
            if k == 0:
                return
            out = burst.take(slice(0, k)) if k < n else burst
            self._expiry.append((now + self.half_open_ns, None, k))
            self._half_open_count += k
            self.stats.max_half_open = max(self.stats.max_half_open, self._half_open_count)
            isn = self.rng.integers(0, 1 << 32, size=k, dtype=np.int64)
            t_out = out.t
        m = out.n
        self.stats.synacks_sent += m
        synack = Burst(
            Kind.SYN_ACK,
            t=np.ascontiguousarray(t_out, dtype=np.int64),
            src=np.full(m, self.ip, np.int64),
            dst=out.src.copy(),
            sport=np.full(m, self.port, np.int64),
            dport=out.sport.copy(),
            seq=np.asarray(isn, np.int64),
            ack=(out.seq + 1) & M32,
            claim=np.full(m, NO_CLAIM, np.int64),
            t_lo=now,
            size=SIZE_BYTES[Kind.SYN_ACK],
        )
        self.out.transmit_burst(synack)
