"""Discrete-event core: integer-nanosecond clock, event heap, drop-tail links.

Links carry either single :class:`~synpow.packets.Packet` objects or
:class:`~synpow.packets.Burst` arrays. Bursts are committed to a channel
when their event fires, possibly ahead of their individual arrival times; a
single packet arriving later is still placed by arrival time when counting
occupancy and choosing its start of transmission.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import zlib
from collections import deque
from typing import Any, Callable, NamedTuple

import numpy as np

from . import _kernels
from .packets import Burst, Packet

log = logging.getLogger(__name__)

NS = 1_000_000_000
DEFAULT_QUEUE_PACKETS = 100


def seconds(t: float) -> int:
    """Seconds to integer nanoseconds."""
    return int(round(t * NS))


class SchedulingInPast(RuntimeError):
    pass


class Event(NamedTuple):
    fire_at: int
    seq: int
    action: Callable[..., Any]
    args: tuple


class Simulator:
    def __init__(self) -> None:
        self.now = 0
        self._queue: list[Event] = []
        self._seq = itertools.count()
        self.events_processed = 0

    def schedule(self, fire_at: int, action: Callable[..., Any], *args: Any) -> Event:
        if fire_at < self.now:
            raise SchedulingInPast(f"event at {fire_at} ns scheduled at now={self.now} ns")
        ev = Event(fire_at, next(self._seq), action, args)
        heapq.heappush(self._queue, ev)
        return ev

    def schedule_in(self, delay: int, action: Callable[..., Any], *args: Any) -> Event:
        return self.schedule(self.now + delay, action, *args)

    def run_until(self, end: int) -> None:
        if end < self.now:
            raise SchedulingInPast(f"run_until({end}) behind clock {self.now}")
        q = self._queue
        pop = heapq.heappop
        while q and q[0].fire_at <= end:
            ev = pop(q)
            self.now = ev.fire_at
            ev.action(*ev.args)
            self.events_processed += 1
        self.now = end

    @property
    def pending(self) -> int:
        return len(self._queue)


def rng_stream(global_seed: int, stream_id: str) -> np.random.Generator:
    """Independent generator per (seed, stream id); other streams cannot perturb it."""
    ss = np.random.SeedSequence(entropy=int(global_seed), spawn_key=(zlib.crc32(stream_id.encode()),))
    return np.random.Generator(np.random.PCG64(ss))


class Channel:
    """One direction of a link: drop-tail FIFO, then serialization, then propagation."""

    def __init__(
        self,
        sim: Simulator,
        name: str,
        bandwidth_bps: float,
        delay_ns: int,
        capacity: int,
        src: Any,
        dst: Any,
    ) -> None:
        if bandwidth_bps <= 0:
            raise ValueError("bandwidth must be positive")
        self.sim = sim
        self.name = name
        self.bandwidth_bps = float(bandwidth_bps)
        self.delay_ns = int(delay_ns)
        self.capacity = int(capacity)
        self.src = src
        self.dst = dst
        self.busy_until = 0
        # (arrival, finish) of committed packets that may still be queued
        self._singles: deque[tuple[int, int]] = deque()
        self._segments: deque[tuple[np.ndarray, np.ndarray]] = deque()
        self._ser_cache: dict[int, int] = {}
        self.packets_in = 0
        self.packets_dropped = 0
        self.packets_delivered = 0
        self.bytes_delivered = 0
        self.offered_by_kind: dict[int, int] = {}

    def ser_ns(self, size_bytes: int) -> int:
        v = self._ser_cache.get(size_bytes)
        if v is None:
            v = int(round(size_bytes * 8 * NS / self.bandwidth_bps))
            self._ser_cache[size_bytes] = v
        return v

    def _prune(self, t: int) -> None:
        s = self._singles
        while s and s[0][1] <= t:
            s.popleft()
        g = self._segments
        while g and (len(g[0][1]) == 0 or g[0][1][-1] <= t):
            g.popleft()

    def occupancy(self, t: int) -> int:
        """Packets that arrived by ``t`` and have not finished transmission."""
        self._prune(t)
        n = 0
        for a, f in self._singles:
            if a <= t < f:
                n += 1
        for arr, fin in self._segments:
            i = int(np.searchsorted(arr, t, "right"))
            if i:
                n += i - int(np.searchsorted(fin[:i], t, "right"))
        return n

    def _last_finish_before(self, t: int) -> int:
        last = 0
        for a, f in self._singles:
            if a <= t and f > last:
                last = f
        for arr, fin in self._segments:
            i = int(np.searchsorted(arr, t, "right"))
            if i and fin[i - 1] > last:
                last = int(fin[i - 1])
        return last

    def _count(self, kind: int, n: int) -> None:
        self.offered_by_kind[kind] = self.offered_by_kind.get(kind, 0) + n

    def transmit(self, pkt: Packet) -> bool:
        """Queue one packet; returns False if it was dropped."""
        if pkt.size <= 0:
            raise ValueError("packet size must be positive")
        now = self.sim.now
        self.packets_in += 1
        self._count(pkt.kind, 1)
        if self._segments:
            occ = self.occupancy(now)
            last = self._last_finish_before(now)
        else:
            # singles only: all have arrived, finishes are increasing
            self._prune(now)
            occ = len(self._singles)
            last = self._singles[-1][1] if occ else 0
        if occ > self.capacity:
            self.packets_dropped += 1
            return False
        ser = self.ser_ns(pkt.size)
        start = max(now, last)
        fin = start + ser
        if self.busy_until > start:
            self.busy_until += ser
        else:
            self.busy_until = fin
        self._singles.append((now, fin))
        self.sim.schedule(fin + self.delay_ns, self._deliver, pkt)
        return True

    def _deliver(self, pkt: Packet) -> None:
        self.packets_delivered += 1
        self.bytes_delivered += pkt.size
        self.dst.receive(pkt, self)

    def _pending_finishes(self, t: int) -> np.ndarray:
        self._prune(t)
        parts = [fin[fin > t] for _, fin in self._segments]
        if self._singles:
            parts.append(np.array([f for _, f in self._singles if f > t], np.int64))
        if not parts:
            return np.empty(0, np.int64)
        out = np.concatenate(parts)
        out.sort()
        return out

    def transmit_burst(self, burst: Burst) -> None:
        """Queue a burst of equal-size packets with sorted arrival times >= now."""
        n = burst.n
        if n == 0:
            return
        now = self.sim.now
        self.packets_in += n
        self._count(burst.kind, n)
        ser = self.ser_ns(burst.size)
        pending = self._pending_finishes(now)
        accept, fin, busy = _kernels.droptail(burst.t, ser, self.busy_until, pending, self.capacity)
        self.busy_until = int(busy)
        n_ok = int(accept.sum())
        self.packets_dropped += n - n_ok
        if n_ok == 0:
            return
        if n_ok != n:
            out = burst.take(accept)
            fin = fin[accept]
        else:
            out = burst.copy()
        self._segments.append((out.t.copy(), fin))
        out.t = fin + self.delay_ns
        t_lo = max(burst.t_lo, now) + ser + self.delay_ns
        out.t_lo = t_lo
        self.sim.schedule(t_lo, self._deliver_burst, out)

    def _deliver_burst(self, burst: Burst) -> None:
        self.packets_delivered += burst.n
        self.bytes_delivered += burst.n * burst.size
        self.dst.receive_burst(burst, self)

    def in_flight(self) -> int:
        return self.packets_in - self.packets_dropped - self.packets_delivered


class Link:
    """Full-duplex link as two independent channels."""

    def __init__(
        self,
        sim: Simulator,
        a: Any,
        b: Any,
        bandwidth_bps: float,
        delay_ns: int,
        capacity: int = DEFAULT_QUEUE_PACKETS,
    ) -> None:
        self.a, self.b = a, b
        self.forward = Channel(sim, f"{a.name}->{b.name}", bandwidth_bps, delay_ns, capacity, a, b)
        self.reverse = Channel(sim, f"{b.name}->{a.name}", bandwidth_bps, delay_ns, capacity, b, a)

    def channel_from(self, node: Any) -> Channel:
        if node is self.a:
            return self.forward
        if node is self.b:
            return self.reverse
        raise KeyError(node.name)

    @property
    def channels(self) -> tuple[Channel, Channel]:
        return self.forward, self.reverse
