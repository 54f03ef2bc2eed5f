"""Adaptive difficulty controller.

Every window the controller pulls per-prefix SYN counts from the edge
switches, keeps an EWMA baseline per prefix, flags a prefix after
``tau_detect`` consecutive windows above ``theta * baseline``, and installs
the smallest difficulty that both meets the drop target and stays inside the
prefix's device latency budget. The rule is retracted after ``tau_clear``
consecutive windows below ``beta * baseline``.
"""

from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

from .edge import EdgeSwitch, FlowRule, Prefix
from .protocol import DEVICE_CLASSES, DeviceClass
from .sim_engine import NS, Simulator

log = logging.getLogger(__name__)


class DropModel(enum.Enum):
    BUDGET = "budget"
    NAIVE = "naive"


@dataclass
class ControllerParams:
    d_default: int = 1
    d_min: int = 5
    d_max: int = 26
    theta: float = 5.0
    beta: float = 2.0
    tau_detect: int = 3
    tau_clear: int = 10
    delta_t: float = 1.0
    ewma_alpha: float = 0.1
    drop_target: float = 0.95
    max_installs_per_sec: int = 10
    attacker_hash_rate_assumed: float = 2e8
    min_baseline_rate: float = 10.0
    drop_model: DropModel = DropModel.BUDGET
    accepted_buckets: int = 2
    T_budget_by_class: dict = field(
        default_factory=lambda: {k: v.t_budget for k, v in DEVICE_CLASSES.items()}
    )

    def validate(self, path: str = "controller") -> list[str]:
        errs = []
        if not 0 <= self.d_default <= 32:
            errs.append(f"{path}.d_default: must be in 0..32")
        if not 0 <= self.d_min <= self.d_max <= 32:
            errs.append(f"{path}.d_min/d_max: need 0 <= d_min <= d_max <= 32")
        if not 1 < self.beta < self.theta:
            errs.append(f"{path}.beta/theta: need 1 < beta < theta")
        if not 0 < self.ewma_alpha <= 1:
            errs.append(f"{path}.ewma_alpha: must be in (0, 1]")
        if not 0 < self.drop_target < 1:
            errs.append(f"{path}.drop_target: must be in (0, 1)")
        if self.tau_detect < 1 or self.tau_clear < 1:
            errs.append(f"{path}.tau_detect/tau_clear: must be >= 1")
        if self.delta_t <= 0:
            errs.append(f"{path}.delta_t: must be > 0")
        if self.max_installs_per_sec < 1:
            errs.append(f"{path}.max_installs_per_sec: must be >= 1")
        if self.attacker_hash_rate_assumed < 0:
            errs.append(f"{path}.attacker_hash_rate_assumed: must be >= 0")
        for name, t in self.T_budget_by_class.items():
            if t <= 0:
                errs.append(f"{path}.T_budget_by_class.{name}: must be > 0")
        return errs


class Mode(enum.Enum):
    NORMAL = "normal"
    ELEVATED = "elevated"


@dataclass
class TelemetrySample:
    prefix: Prefix
    window_start: int  # ns
    syn_count: int
    early_drop_count: int

    def __post_init__(self) -> None:
        if not self.syn_count >= self.early_drop_count >= 0:
            raise ValueError("need syn_count >= early_drop_count >= 0")


@dataclass
class PrefixState:
    prefix: Prefix
    ingress_switch: str
    device_class: DeviceClass = DEVICE_CLASSES["laptop"]
    syn_rate: float = 0.0
    baseline: "float | None" = None
    over_count: int = 0
    under_count: int = 0
    mode: Mode = Mode.NORMAL
    d_star: "int | None" = None
    last_over: bool = False


@dataclass(frozen=True)
class Infeasible:
    """No difficulty satisfies both constraints."""

    reason: str


def early_drop_expected(
    d: int,
    attacker_hash_rate: float,
    attacker_syn_rate: float,
    model: DropModel = DropModel.BUDGET,
    accepted_buckets: int = 2,
) -> float:
    """Expected fraction of attack SYNs the edge drops at difficulty ``d``.

    Budget model: the attacker can back ``hash_rate / 2^d`` SYNs per second
    with real proofs; the rest are dropped. Naive model: random nonces, each
    passing with probability ``accepted_buckets * 2^-d``.
    """
    if model is DropModel.NAIVE:
        return max(0.0, 1.0 - accepted_buckets * 2.0 ** -d)
    if attacker_syn_rate <= 0:
        raise ValueError("attacker_syn_rate must be > 0")
    return 1.0 - min(1.0, attacker_hash_rate / (attacker_syn_rate * 2.0 ** d))


def within_budget(d: int, device: DeviceClass, t_budget: float) -> bool:
    return 2.0 ** d / device.hash_rate <= t_budget


def select_difficulty(
    params: ControllerParams,
    device: DeviceClass,
    attacker_syn_rate: float,
    attacker_hash_rate: "float | None" = None,
) -> "int | Infeasible":
    """Smallest d in [d_min, d_max] meeting the drop target and latency budget."""
    h = params.attacker_hash_rate_assumed if attacker_hash_rate is None else attacker_hash_rate
    budget = params.T_budget_by_class.get(device.name, device.t_budget)
    for d in range(params.d_min, params.d_max + 1):
        if not within_budget(d, device, budget):
            return Infeasible(f"latency budget {budget}s for {device.name} exceeded at d={d}")
        drop = early_drop_expected(d, h, attacker_syn_rate, params.drop_model, params.accepted_buckets)
        if drop >= params.drop_target:
            return d
    return Infeasible(f"drop target {params.drop_target} unreachable by d_max={params.d_max}")


def ingest_telemetry(state: PrefixState, sample: TelemetrySample, params: ControllerParams) -> None:
    rate = sample.syn_count / params.delta_t
    state.syn_rate = rate
    if state.baseline is None:
        state.baseline = max(rate, params.min_baseline_rate)
        state.last_over = False
        return
    over = rate > params.theta * state.baseline
    state.last_over = over
    if over:
        state.over_count += 1
        state.under_count = 0
    else:
        state.over_count = 0
        if state.mode is Mode.ELEVATED and rate < params.beta * state.baseline:
            state.under_count += 1
        else:
            state.under_count = 0
    if state.mode is Mode.NORMAL and not over:
        a = params.ewma_alpha
        state.baseline = max((1 - a) * state.baseline + a * rate, params.min_baseline_rate)


def detect(state: PrefixState, params: ControllerParams) -> bool:
    return state.mode is Mode.NORMAL and state.over_count >= params.tau_detect


class Command(NamedTuple):
    action: str  # "install" or "retract"
    switch: str
    prefix: Prefix
    d: int
    queued_at: int


@dataclass
class Decision:
    t: int
    prefix: str
    syn_rate: float
    baseline: float
    over_count: int
    under_count: int
    mode: str
    d_star: "int | None"
    commands: list


class Controller:
    """State machine over all tracked prefixes; no simulator dependency."""

    def __init__(self, params: ControllerParams, states: list[PrefixState]) -> None:
        self.params = params
        self.states = {s.prefix: s for s in states}
        self.queue: deque[Command] = deque()
        self.issued: list[tuple[int, Command]] = []
        self.decisions: list[Decision] = []
        self.infeasible: list[tuple[int, str, str]] = []
        self._recent: deque[int] = deque()

    def attacker_rate(self, state: PrefixState) -> float:
        # the excess over the frozen baseline is attributed to the attack
        return max(state.syn_rate - (state.baseline or 0.0), 1.0)

    def control_step(self, samples: list[TelemetrySample], now: int) -> list[Command]:
        p = self.params
        touched: dict[Prefix, list[str]] = {}
        for s in samples:
            st = self.states[s.prefix]
            ingest_telemetry(st, s, p)
            notes = touched.setdefault(s.prefix, [])
            if detect(st, p):
                d = select_difficulty(p, st.device_class, self.attacker_rate(st))
                if isinstance(d, Infeasible):
                    self.infeasible.append((now, str(st.prefix), d.reason))
                    log.warning("prefix %s: %s; applying d_max=%d", st.prefix, d.reason, p.d_max)
                    d = p.d_max
                st.mode, st.d_star, st.over_count = Mode.ELEVATED, d, 0
                self.queue.append(Command("install", st.ingress_switch, st.prefix, d, now))
                notes.append(f"queue install d={d}")
            elif st.mode is Mode.ELEVATED and st.under_count >= p.tau_clear:
                st.mode, st.d_star, st.under_count = Mode.NORMAL, None, 0
                self.queue.append(Command("retract", st.ingress_switch, st.prefix, p.d_default, now))
                notes.append("queue retract")

        out = []
        horizon = now - NS
        while self._recent and self._recent[0] <= horizon:
            self._recent.popleft()
        while self.queue and len(self._recent) < p.max_installs_per_sec:
            cmd = self.queue.popleft()
            self._recent.append(now)
            self.issued.append((now, cmd))
            out.append(cmd)
            touched.setdefault(cmd.prefix, []).append(f"issue {cmd.action}")

        for prefix, notes in touched.items():
            st = self.states[prefix]
            self.decisions.append(
                Decision(now, str(prefix), st.syn_rate, st.baseline or 0.0, st.over_count,
                         st.under_count, st.mode.value, st.d_star, notes)
            )
        return out

    @property
    def installs(self) -> list[tuple[int, Command]]:
        return [(t, c) for t, c in self.issued if c.action == "install"]

    @property
    def retracts(self) -> list[tuple[int, Command]]:
        return [(t, c) for t, c in self.issued if c.action == "retract"]


class SdnController:
    """Drives a :class:`Controller` from the simulator: periodic telemetry pulls
    and command dispatch to the edge switches."""

    def __init__(
        self,
        sim: Simulator,
        params: ControllerParams,
        switches: dict[str, EdgeSwitch],
        states: list[PrefixState],
        on_command: "Callable[[Command], None] | None" = None,
    ) -> None:
        self.sim = sim
        self.params = params
        self.switches = switches
        self.core = Controller(params, states)
        self.on_command = on_command
        self.delta_ns = int(round(params.delta_t * NS))
        self.telemetry_pulls = 0

    def start(self) -> None:
        self.sim.schedule(self.sim.now + self.delta_ns, self._tick)

    def _tick(self) -> None:
        now = self.sim.now
        samples = []
        for st in self.core.states.values():
            seen, dropped = self.switches[st.ingress_switch].pull_counters()
            self.telemetry_pulls += 1
            samples.append(TelemetrySample(st.prefix, now - self.delta_ns, seen, dropped))
        for cmd in self.core.control_step(samples, now):
            sw = self.switches[cmd.switch]
            if cmd.action == "install":
                sw.install_rule(FlowRule(cmd.prefix, cmd.d, installed_at=now, priority=1))
            else:
                sw.retract_rule(cmd.prefix)
            if self.on_command is not None:
                self.on_command(cmd)
        self.sim.schedule(now + self.delta_ns, self._tick)
