"""SDN edge switches, routers and the traffic sink.

Edge switches verify PoW on SYNs entering from their host ports using a
longest-prefix-match flow table. Rules are scoped to the ingress switch: a SYN
whose claimed source lies outside the switch's own prefix is matched (and
counted) as if it came from that prefix, so spoofing cannot dodge a rule.
"""

from __future__ import annotations

import ipaddress
import logging
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from . import pow_core
from .packets import Burst, Kind, Packet
from .pow_core import HashBackend
from .sim_engine import NS, Channel, Simulator

log = logging.getLogger(__name__)

DEFAULT_TABLE_CAPACITY = 1024
DEFAULT_CONTROL_DELAY_S = 0.010


@dataclass(frozen=True, order=True)
class Prefix:
    network: int
    length: int

    def __post_init__(self) -> None:
        if not 0 <= self.length <= 32:
            raise ValueError(f"prefix length {self.length} out of range")
        if self.network & ~self.mask & 0xFFFFFFFF:
            raise ValueError(f"host bits set in {self}")

    @classmethod
    def parse(cls, text: str) -> "Prefix":
        net = ipaddress.IPv4Network(text, strict=True)
        return cls(int(net.network_address), net.prefixlen)

    @property
    def mask(self) -> int:
        return (0xFFFFFFFF << (32 - self.length)) & 0xFFFFFFFF

    def contains(self, ip: int) -> bool:
        return (ip & self.mask) == self.network

    def contains_many(self, ips: np.ndarray) -> np.ndarray:
        return (np.asarray(ips, np.int64) & self.mask) == self.network

    def __str__(self) -> str:
        return f"{ipaddress.IPv4Address(self.network)}/{self.length}"


DEFAULT_PREFIX = Prefix(0, 0)


@dataclass(frozen=True)
class FlowRule:
    match_prefix: Prefix
    action_difficulty: int
    installed_at: int = 0  # ns
    priority: int = 0
    match_syn_only: bool = True

    def __post_init__(self) -> None:
        if not 0 <= self.action_difficulty <= pow_core.MAX_DIFFICULTY:
            raise ValueError(f"difficulty {self.action_difficulty} out of range")

    def sort_key(self) -> tuple[int, int, int]:
        return (self.match_prefix.length, self.priority, self.installed_at)


class TableFull(RuntimeError):
    pass


class NoSuchRule(KeyError):
    pass


class FlowTable:
    """PoW rules keyed by match; the 0.0.0.0/0 default rule is always present."""

    def __init__(self, d_default: int, capacity: int = DEFAULT_TABLE_CAPACITY) -> None:
        self.capacity = capacity
        self._rules: dict[tuple[Prefix, bool], FlowRule] = {}
        self._ordered: list[FlowRule] = []
        self._rules[(DEFAULT_PREFIX, True)] = FlowRule(DEFAULT_PREFIX, d_default, 0, -1)
        self._reorder()

    def _reorder(self) -> None:
        self._ordered = sorted(self._rules.values(), key=FlowRule.sort_key, reverse=True)

    def __len__(self) -> int:
        return len(self._rules)

    @property
    def rules(self) -> list[FlowRule]:
        return list(self._ordered)

    @property
    def default_rule(self) -> FlowRule:
        return self._rules[(DEFAULT_PREFIX, True)]

    def install(self, rule: FlowRule) -> None:
        key = (rule.match_prefix, rule.match_syn_only)
        if key not in self._rules and len(self._rules) >= self.capacity:
            raise TableFull(f"flow table full ({self.capacity} rules)")
        self._rules[key] = rule
        self._reorder()

    def retract(self, prefix: Prefix) -> FlowRule:
        if prefix == DEFAULT_PREFIX:
            raise NoSuchRule("the default rule cannot be retracted")
        rule = self._rules.pop((prefix, True), None)
        if rule is None:
            raise NoSuchRule(str(prefix))
        self._reorder()
        return rule

    def lookup(self, ip: int) -> FlowRule:
        for rule in self._ordered:
            if rule.match_prefix.contains(ip):
                return rule
        raise AssertionError("default rule missing")  # pragma: no cover

    def lookup_many(self, ips: np.ndarray) -> np.ndarray:
        """Matched difficulty per address."""
        ips = np.asarray(ips, np.int64)
        d = np.full(len(ips), -1, np.int64)
        for rule in self._ordered:
            hit = (d < 0) & rule.match_prefix.contains_many(ips)
            d[hit] = rule.action_difficulty
            if not (d < 0).any():
                break
        return d


class BurstMerger:
    """Coalesces same-instant bursts headed to one channel into one sorted burst.

    The drop-tail kernel needs every burst it sees to arrive no earlier than
    the ones already committed, so parallel flows are merged first.
    """

    def __init__(self, sim: Simulator) -> None:
        self.sim = sim
        self._pending: dict[tuple[int, int], list] = {}

    def emit(self, channel: Channel, burst: Burst) -> None:
        key = (id(channel), int(burst.kind))
        bucket = self._pending.get(key)
        if bucket is None:
            self._pending[key] = [channel, burst]
            self.sim.schedule(self.sim.now, self._flush, key)
        else:
            bucket.append(burst)

    def _flush(self, key) -> None:
        channel, *bursts = self._pending.pop(key)
        channel.transmit_burst(Burst.concat(bursts))


class Forwarder:
    """Exact host routes plus a default channel."""

    def __init__(self, sim: Simulator, name: str) -> None:
        self.sim = sim
        self.name = name
        self.routes: dict[int, Channel] = {}
        self.default: "Channel | None" = None
        self.merger = BurstMerger(sim)
        self.dropped_no_route = 0
        self._route_keys = np.empty(0, np.int64)

    def add_route(self, ip: int, channel: Channel) -> None:
        self.routes[ip] = channel
        self._route_keys = np.array(sorted(self.routes), np.int64)

    def route(self, dst: int) -> "Channel | None":
        return self.routes.get(dst, self.default)

    def forward(self, pkt: Packet) -> None:
        ch = self.route(pkt.dst_ip)
        if ch is None:
            self.dropped_no_route += 1
            return
        ch.transmit(pkt)

    def forward_burst(self, burst: Burst) -> None:
        if burst.n == 0:
            return
        known = np.isin(burst.dst, self._route_keys)
        if not known.any():
            if self.default is None:
                self.dropped_no_route += burst.n
            else:
                self.merger.emit(self.default, burst)
            return
        rest = ~known
        if rest.any():
            if self.default is None:
                self.dropped_no_route += int(rest.sum())
            else:
                self.merger.emit(self.default, burst.take(rest))
        for ip in np.unique(burst.dst[known]):
            self.merger.emit(self.routes[int(ip)], burst.take(burst.dst == ip))

    def receive(self, pkt: Packet, channel: Channel) -> None:
        self.forward(pkt)

    def receive_burst(self, burst: Burst, channel: Channel) -> None:
        self.forward_burst(burst)


class Router(Forwarder):
    pass


class Sink:
    """Absorbs traffic for addresses outside the modeled network."""

    def __init__(self, name: str = "sink") -> None:
        self.name = name
        self.packets = 0
        self.bytes = 0
        self.by_kind: dict[int, int] = defaultdict(int)

    def receive(self, pkt: Packet, channel) -> None:
        self.packets += 1
        self.bytes += pkt.size
        self.by_kind[int(pkt.kind)] += 1

    def receive_burst(self, burst: Burst, channel) -> None:
        self.packets += burst.n
        self.bytes += burst.n * burst.size
        self.by_kind[int(burst.kind)] += burst.n


@dataclass
class EdgeCounters:
    syns_seen: int = 0
    syns_dropped: int = 0

    @property
    def early_drop_ratio(self) -> float:
        return self.syns_dropped / self.syns_seen if self.syns_seen else 0.0


class EdgeSwitch(Forwarder):
    """Ingress switch with a ``verify_pow(d)`` action on SYNs from host ports.

    A failed check drops the SYN silently; nothing is sent back.
    """

    def __init__(
        self,
        sim: Simulator,
        name: str,
        prefix: Prefix,
        d_default: int,
        verify: bool = True,
        backend: HashBackend = HashBackend.SUPERFASTHASH32,
        bucket_width: float = pow_core.DEFAULT_BUCKET_WIDTH,
        control_delay_s: float = DEFAULT_CONTROL_DELAY_S,
        table_capacity: int = DEFAULT_TABLE_CAPACITY,
    ) -> None:
        super().__init__(sim, name)
        self.prefix = prefix
        self.verify_enabled = verify
        self.backend = backend
        self.bucket_width = bucket_width
        self.control_delay_ns = int(round(control_delay_s * NS))
        self.table = FlowTable(d_default, table_capacity)
        self.counters = EdgeCounters()
        self.per_prefix: dict[Prefix, EdgeCounters] = defaultdict(EdgeCounters)
        self.host_ports: set[int] = set()  # id() of channels arriving from hosts
        self.rule_log: list[tuple[int, str, str, int]] = []
        self._win_seen = 0
        self._win_dropped = 0

    def attach_host(self, ip: int, to_host: Channel, from_host: Channel) -> None:
        self.add_route(ip, to_host)
        self.host_ports.add(id(from_host))

    # -- control plane
    def install_rule(self, rule: FlowRule) -> None:
        self.sim.schedule(self.sim.now + self.control_delay_ns, self._apply_install, rule)

    def retract_rule(self, prefix: Prefix) -> None:
        self.sim.schedule(self.sim.now + self.control_delay_ns, self._apply_retract, prefix)

    def _apply_install(self, rule: FlowRule) -> None:
        self.table.install(rule)
        self.rule_log.append((self.sim.now, "install", str(rule.match_prefix), rule.action_difficulty))

    def _apply_retract(self, prefix: Prefix) -> None:
        try:
            self.table.retract(prefix)
        except NoSuchRule:
            log.info("%s: retract of absent rule %s ignored", self.name, prefix)
            return
        self.rule_log.append((self.sim.now, "retract", str(prefix), -1))

    def pull_counters(self) -> tuple[int, int]:
        """SYNs seen and dropped since the previous pull."""
        out = (self._win_seen, self._win_dropped)
        self._win_seen = self._win_dropped = 0
        return out

    # -- data plane
    def _match_key(self, src: int) -> int:
        return src if self.prefix.contains(src) else self.prefix.network

    def _bucket(self) -> int:
        return int((self.sim.now / NS) // self.bucket_width)

    def _count(self, seen: int, dropped: int) -> None:
        self.counters.syns_seen += seen
        self.counters.syns_dropped += dropped
        pc = self.per_prefix[self.prefix]
        pc.syns_seen += seen
        pc.syns_dropped += dropped
        self._win_seen += seen
        self._win_dropped += dropped

    def check_syn(self, pkt: Packet) -> bool:
        """Forward decision for one SYN (True = forward)."""
        if not self.verify_enabled:
            return True
        d = self.table.lookup(self._match_key(pkt.src_ip)).action_difficulty
        if d == 0 or (pkt.pow_claim >= d):
            return True
        return pow_core.verify(
            pkt.src_ip, pkt.dst_ip, pkt.src_port, pkt.dst_port, pkt.ack, d,
            self.backend, self.sim.now / NS, self.bucket_width,
        )

    def receive(self, pkt: Packet, channel: Channel) -> None:
        if pkt.kind is Kind.SYN and id(channel) in self.host_ports:
            ok = self.check_syn(pkt)
            self._count(1, 0 if ok else 1)
            if not ok:
                return
        self.forward(pkt)

    def receive_burst(self, burst: Burst, channel: Channel) -> None:
        if burst.kind is Kind.SYN and id(channel) in self.host_ports and burst.n:
            if self.verify_enabled:
                inside = self.prefix.contains_many(burst.src)
                keys = np.where(inside, burst.src, self.prefix.network)
                d = self.table.lookup_many(keys)
                ok = pow_core.verify_many(
                    burst.src, burst.dst, burst.sport, burst.dport, burst.ack,
                    d, self.backend, self._bucket(), burst.claim,
                )
                n_ok = int(ok.sum())
                self._count(burst.n, burst.n - n_ok)
                if n_ok < burst.n:
                    burst = burst.take(ok)
            else:
                self._count(burst.n, 0)
        self.forward_burst(burst)
