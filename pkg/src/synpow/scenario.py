"""Scenario configuration: YAML schema, loading and validation.

Type and unknown-field errors come from the schema; cross-field invariants
are checked by :func:`validate` and reported with a dotted path into the
config.
"""

from __future__ import annotations

import copy
import hashlib
import ipaddress
import json
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .controller import ControllerParams, DropModel
from .edge import Prefix
from .pow_core import HashBackend
from .protocol import DEVICE_CLASSES, DeviceClass

DEFENSES = ("none", "syncookies", "staticpow", "adaptive")
ATTACKS = ("none", "curl", "cflood", "cflood-spoof")


class ConfigError(ValueError):
    """Every violated invariant, one ``path: message`` per line."""

    def __init__(self, errors: list[str]) -> None:
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LinkSpec(_Model):
    bandwidth_mbps: float
    delay_ms: float
    queue: int = 100


class LanSpec(_Model):
    name: str
    prefix: str
    router: str
    switch: str
    uplink: LinkSpec
    access: LinkSpec
    clients: int = 3
    device_class: str = "laptop"
    attackers: int = 0


class CoreLinkSpec(_Model):
    a: str
    b: str
    link: LinkSpec


class ServerSpec(_Model):
    lan: str = "A"
    ip: str = "10.1.0.100"
    port: int = 443
    link: LinkSpec
    backlog: int = 1024
    proven_reserve: float = 0.25
    half_open_timeout_s: float = 3.0
    service_time_s: float = 0.002
    cpus: int = 8
    cookie_cost_s: float = 5e-6


class SinkSpec(_Model):
    router: str = "r0"
    link: LinkSpec


class TopologySpec(_Model):
    lans: list[LanSpec]
    core: list[CoreLinkSpec]
    server: ServerSpec
    sink: SinkSpec


class WorkloadSpec(_Model):
    duration_s: float = 30.0
    warmup_s: float = 10.0
    timeout_s: float = 1.0
    think_time_s: float = 0.0
    think_time_by_lan: dict[str, float] = Field(default_factory=dict)
    think_jitter: float = 0.2  # think time drawn uniformly within +-this fraction
    request_bytes: int = 140
    response_bytes: int = 1064
    ladder: list[int] = Field(default_factory=lambda: [16])
    advisory: bool = True
    advisory_delay_s: float = 0.2
    real_solve_max_d: int = 16
    start_jitter_s: float = 0.05


class PowSpec(_Model):
    backend: Literal["superfasthash", "sha256-trunc32"] = "superfasthash"
    bucket_width_s: float = 64.0


class DefenseSpec(_Model):
    mode: Literal["none", "syncookies", "staticpow", "adaptive"] = "adaptive"
    static_d: int = 26
    control_delay_s: float = 0.010
    table_capacity: int = 1024


class ControllerSpec(_Model):
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
    drop_model: Literal["budget", "naive"] = "budget"
    T_budget_by_class: dict[str, float] = Field(default_factory=dict)


class AttackSpec(_Model):
    variant: Literal["none", "curl", "cflood", "cflood-spoof"] = "cflood-spoof"
    lan: str = "C"
    rate_pps: float = 350000.0  # total over all attackers in the LAN
    curl_rate: float = 50.0  # connections/s per attacker
    start_s: float = 5.0
    stop_s: Optional[float] = None  # None: until the end of the run
    spoof_space: str = "0.0.0.0/0"
    nonce_policy: Literal["zero", "random"] = "zero"
    spacing: Literal["deterministic", "poisson"] = "deterministic"
    curl_timeout_s: float = 0.1
    attacker_solves_at: Optional[int] = None
    attacker_hash_rate: float = 2e8


class DeviceSpec(_Model):
    hash_rate: float
    t_budget: float = 0.5


class ScenarioConfig(_Model):
    name: str = "reference"
    seed: int = 1
    runs: int = 5
    scale: float = 1.0
    topology: TopologySpec
    workload: WorkloadSpec = Field(default_factory=WorkloadSpec)
    pow: PowSpec = Field(default_factory=PowSpec)
    defense: DefenseSpec = Field(default_factory=DefenseSpec)
    controller: ControllerSpec = Field(default_factory=ControllerSpec)
    attack: AttackSpec = Field(default_factory=AttackSpec)
    devices: dict[str, DeviceSpec] = Field(default_factory=dict)

    # -- derived views
    def device_classes(self) -> dict[str, DeviceClass]:
        out = dict(DEVICE_CLASSES)
        for name, d in self.devices.items():
            out[name] = DeviceClass(name, d.hash_rate, d.t_budget)
        return out

    def controller_params(self) -> ControllerParams:
        c = self.controller
        budgets = {n: dc.t_budget for n, dc in self.device_classes().items()}
        budgets.update(c.T_budget_by_class)
        return ControllerParams(
            d_default=c.d_default, d_min=c.d_min, d_max=c.d_max, theta=c.theta, beta=c.beta,
            tau_detect=c.tau_detect, tau_clear=c.tau_clear, delta_t=c.delta_t,
            ewma_alpha=c.ewma_alpha, drop_target=c.drop_target,
            max_installs_per_sec=c.max_installs_per_sec,
            attacker_hash_rate_assumed=c.attacker_hash_rate_assumed,
            min_baseline_rate=c.min_baseline_rate, drop_model=DropModel(c.drop_model),
            T_budget_by_class=budgets,
        )

    @property
    def backend(self) -> HashBackend:
        return HashBackend.parse(self.pow.backend)

    def lan(self, name: str) -> LanSpec:
        for lan in self.topology.lans:
            if lan.name == name:
                return lan
        raise KeyError(name)

    def fingerprint(self) -> str:
        """Digest of everything except the attack/defense toggles and the seed."""
        data = self.model_dump(mode="json")
        for k in ("defense", "attack", "seed", "runs"):
            data.pop(k, None)
        data["attack_shape"] = {k: v for k, v in self.attack.model_dump(mode="json").items() if k != "variant"}
        blob = json.dumps(data, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_overrides(self, **changes) -> "ScenarioConfig":
        """Copy with dotted-path overrides, e.g. ``{"defense.mode": "none"}``."""
        data = copy.deepcopy(self.model_dump())
        for dotted, value in changes.items():
            node = data
            *parents, leaf = dotted.split(".")
            for p in parents:
                node = node[p]
            node[leaf] = value
        return parse_config(data)


def _pydantic_errors(exc: ValidationError) -> list[str]:
    out = []
    for e in exc.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        out.append(f"{path}: {e['msg']}")
    return out


def parse_config(data: dict) -> ScenarioConfig:
    try:
        cfg = ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_pydantic_errors(exc)) from None
    errs = validate(cfg)
    if errs:
        raise ConfigError(errs)
    return cfg


def load_config(path: "str | Path | None" = None) -> ScenarioConfig:
    """Load a scenario file; None loads the bundled reference scenario."""
    if path is None:
        text = resources.files("synpow").joinpath("scenarios/reference.yaml").read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError([f"<file>: cannot read {path}: {exc.strerror}"]) from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"<file>: YAML syntax error: {exc}"]) from None
    if not isinstance(data, dict):
        raise ConfigError(["<root>: expected a mapping"])
    return parse_config(data)


def _check_link(link: LinkSpec, path: str, errs: list[str]) -> None:
    if link.bandwidth_mbps <= 0:
        errs.append(f"{path}.bandwidth_mbps: must be > 0")
    if link.delay_ms < 0:
        errs.append(f"{path}.delay_ms: must be >= 0")
    if link.queue < 1:
        errs.append(f"{path}.queue: must be >= 1")


def validate(cfg: ScenarioConfig) -> list[str]:
    """All cross-field invariant violations, each prefixed with its path."""
    errs: list[str] = []
    if cfg.runs < 1:
        errs.append("runs: must be >= 1")
    if cfg.scale <= 0:
        errs.append("scale: must be > 0")
    if cfg.seed < 0:
        errs.append("seed: must be >= 0")

    topo = cfg.topology
    devices = cfg.device_classes()
    names = [lan.name for lan in topo.lans]
    if len(set(names)) != len(names):
        errs.append("topology.lans: duplicate LAN names")
    routers = {lan.router for lan in topo.lans}
    prefixes = []
    for i, lan in enumerate(topo.lans):
        p = f"topology.lans.{i}"
        try:
            prefixes.append((Prefix.parse(lan.prefix), p))
        except ValueError as exc:
            errs.append(f"{p}.prefix: {exc}")
        _check_link(lan.uplink, f"{p}.uplink", errs)
        _check_link(lan.access, f"{p}.access", errs)
        if lan.clients < 0:
            errs.append(f"{p}.clients: must be >= 0")
        if lan.attackers < 0:
            errs.append(f"{p}.attackers: must be >= 0")
        if lan.device_class not in devices:
            errs.append(f"{p}.device_class: unknown device class {lan.device_class!r}")
        if lan.clients + lan.attackers > 200:
            errs.append(f"{p}: at most 200 hosts per LAN")
    for a in range(len(prefixes)):
        for b in range(a + 1, len(prefixes)):
            pa, pb = prefixes[a][0], prefixes[b][0]
            if pa.contains(pb.network) or pb.contains(pa.network):
                errs.append(f"{prefixes[b][1]}.prefix: overlaps {prefixes[a][1]}.prefix")
    for i, c in enumerate(topo.core):
        for end in ("a", "b"):
            if getattr(c, end) not in routers:
                errs.append(f"topology.core.{i}.{end}: unknown router {getattr(c, end)!r}")
        _check_link(c.link, f"topology.core.{i}.link", errs)
    if routers and not _connected(routers, [(c.a, c.b) for c in topo.core]):
        errs.append("topology.core: routers are not all connected")
    srv = topo.server
    if srv.lan not in names:
        errs.append(f"topology.server.lan: unknown LAN {srv.lan!r}")
    else:
        try:
            sip = int(ipaddress.IPv4Address(srv.ip))
            lp = Prefix.parse(cfg.lan(srv.lan).prefix)
            if not lp.contains(sip):
                errs.append(f"topology.server.ip: {srv.ip} is outside LAN {srv.lan}'s prefix")
        except ValueError as exc:
            errs.append(f"topology.server.ip: {exc}")
    _check_link(srv.link, "topology.server.link", errs)
    if not 0 < srv.port < 65536:
        errs.append("topology.server.port: must be in 1..65535")
    if srv.backlog < 1:
        errs.append("topology.server.backlog: must be >= 1")
    if not 0 <= srv.proven_reserve < 1:
        errs.append("topology.server.proven_reserve: must be in [0, 1)")
    if srv.cpus < 1:
        errs.append("topology.server.cpus: must be >= 1")
    if srv.service_time_s < 0 or srv.cookie_cost_s < 0 or srv.half_open_timeout_s <= 0:
        errs.append("topology.server: times must be non-negative (half-open timeout > 0)")
    if topo.sink.router not in routers:
        errs.append(f"topology.sink.router: unknown router {topo.sink.router!r}")
    _check_link(topo.sink.link, "topology.sink.link", errs)

    w = cfg.workload
    if w.duration_s <= 0:
        errs.append("workload.duration_s: must be > 0")
    if not 0 <= w.warmup_s < w.duration_s:
        errs.append("workload.warmup_s: must be in [0, duration_s)")
    if w.timeout_s <= 0:
        errs.append("workload.timeout_s: must be > 0")
    if w.think_time_s < 0 or any(v < 0 for v in w.think_time_by_lan.values()):
        errs.append("workload.think_time_s: must be >= 0")
    if not 0 <= w.think_jitter < 1:
        errs.append("workload.think_jitter: must be in [0, 1)")
    for lan in w.think_time_by_lan:
        if lan not in names:
            errs.append(f"workload.think_time_by_lan.{lan}: unknown LAN")
    if w.request_bytes <= 0 or w.response_bytes <= 0:
        errs.append("workload: transaction sizes must be > 0")
    if any(not 0 <= d <= 32 for d in w.ladder):
        errs.append("workload.ladder: levels must be in 0..32")
    if not 0 <= w.real_solve_max_d <= 32:
        errs.append("workload.real_solve_max_d: must be in 0..32")

    if cfg.pow.bucket_width_s <= 0:
        errs.append("pow.bucket_width_s: must be > 0")
    if not 0 <= cfg.defense.static_d <= 32:
        errs.append("defense.static_d: must be in 0..32")
    if cfg.defense.table_capacity < 1:
        errs.append("defense.table_capacity: must be >= 1")
    if cfg.defense.mode == "adaptive":
        errs.extend(cfg.controller_params().validate("controller"))
        for name in cfg.controller.T_budget_by_class:
            if name not in devices:
                errs.append(f"controller.T_budget_by_class.{name}: unknown device class")

    for name, d in cfg.devices.items():
        if d.hash_rate <= 0:
            errs.append(f"devices.{name}.hash_rate: must be > 0")
        if d.t_budget <= 0:
            errs.append(f"devices.{name}.t_budget: must be > 0")

    a = cfg.attack
    if a.variant != "none":
        if a.lan not in names:
            errs.append(f"attack.lan: unknown LAN {a.lan!r}")
        elif cfg.lan(a.lan).attackers < 1:
            errs.append(f"topology.lans.{names.index(a.lan)}.attackers: attack requested but LAN {a.lan} has no attackers")
        if a.rate_pps <= 0:
            errs.append("attack.rate_pps: must be > 0")
        if a.variant == "curl" and not 0 < a.curl_rate <= 1000:
            errs.append("attack.curl_rate: must be in (0, 1000]")
        if a.start_s < 0:
            errs.append("attack.start_s: must be >= 0")
        if a.stop_s is not None and a.stop_s <= a.start_s:
            errs.append("attack.stop_s: must be after start_s")
        if a.variant == "cflood-spoof":
            try:
                Prefix.parse(a.spoof_space)
            except ValueError as exc:
                errs.append(f"attack.spoof_space: {exc}")
        if a.attacker_solves_at is not None and not 0 <= a.attacker_solves_at <= 32:
            errs.append("attack.attacker_solves_at: must be in 0..32")
    return errs


def _connected(nodes: set[str], edges: list[tuple[str, str]]) -> bool:
    adj: dict[str, set[str]] = {n: set() for n in nodes}
    for a, b in edges:
        if a in adj and b in adj:
            adj[a].add(b)
            adj[b].add(a)
    start = next(iter(nodes))
    seen, todo = {start}, [start]
    while todo:
        for nb in adj[todo.pop()]:
            if nb not in seen:
                seen.add(nb)
                todo.append(nb)
    return seen == nodes
