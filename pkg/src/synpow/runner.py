"""Topology construction, single runs and the four-phase experiment matrix."""

from __future__ import annotations

import ipaddress
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .attacks import AttackProfile, NoncePolicy, Variant, make_attacker
from .controller import Command, PrefixState, SdnController
from .edge import EdgeSwitch, Prefix, Router, Sink
from .metrics import ClientResult, ExperimentQuad, RunMetrics
from .packets import Kind
from .protocol import Client, Server, ServerMode
from .scenario import ScenarioConfig
from .sim_engine import NS, Link, Simulator, rng_stream

log = logging.getLogger(__name__)

PHASE_TOGGLES = {
    # phase: (attack on, defense on)
    "baseline": (False, False),
    "unmitigated": (True, False),
    "overhead": (False, True),
    "mitigated": (True, True),
}
CLIENT_HOST_OFFSET = 11
ATTACKER_HOST_OFFSET = 256 + 1


def run_seed(global_seed: int, run_index: int) -> int:
    """Per-repetition seed; every phase of one repetition shares it."""
    ss = np.random.SeedSequence(entropy=int(global_seed), spawn_key=(int(run_index),))
    return int(ss.generate_state(1, np.uint32)[0])


def defense_label(cfg: ScenarioConfig) -> str:
    d = cfg.defense
    return f"staticpow:{d.static_d}" if d.mode == "staticpow" else d.mode


def apply_defense_flag(cfg: ScenarioConfig, text: str) -> ScenarioConfig:
    """``none | syncookies | staticpow:<d> | adaptive``"""
    if text.startswith("staticpow"):
        _, _, d = text.partition(":")
        if not d:
            raise ValueError("staticpow needs a difficulty, e.g. staticpow:26")
        return cfg.with_overrides(**{"defense.mode": "staticpow", "defense.static_d": int(d)})
    if text not in ("none", "syncookies", "adaptive"):
        raise ValueError(f"unknown defense {text!r}")
    return cfg.with_overrides(**{"defense.mode": text})


def apply_attack_flag(cfg: ScenarioConfig, text: str) -> ScenarioConfig:
    if text not in ("none", "curl", "cflood", "cflood-spoof"):
        raise ValueError(f"unknown attack {text!r}")
    return cfg.with_overrides(**{"attack.variant": text})


@dataclass
class Network:
    """A built simulation plus handles on everything the metrics need."""

    sim: Simulator
    cfg: ScenarioConfig
    phase: str
    seed: int
    server: Server
    clients: list[Client]
    attackers: list
    switches: dict[str, EdgeSwitch]
    lan_switch: dict[str, str]
    routers: dict[str, Router]
    sink: Sink
    links: list[Link]
    server_link: Link
    controller: "SdnController | None" = None
    attack_on: bool = False
    defense: str = "none"
    advisories: list = field(default_factory=list)

    @property
    def channels(self):
        for link in self.links:
            yield from link.channels

    def server_egress(self):
        return self.server_link.channel_from(self.server)


def _host_ip(prefix: Prefix, offset: int) -> int:
    return prefix.network + offset


def _next_hops(routers: list[str], edges: list[tuple[str, str]]) -> dict[str, dict[str, str]]:
    """First hop on a BFS shortest path, for every (router, destination router)."""
    adj: dict[str, list[str]] = {r: [] for r in routers}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    table: dict[str, dict[str, str]] = {}
    for src in routers:
        first: dict[str, str] = {}
        todo = deque()
        for nb in adj[src]:
            if nb not in first:
                first[nb] = nb
                todo.append(nb)
        while todo:
            cur = todo.popleft()
            for nb in adj[cur]:
                if nb != src and nb not in first:
                    first[nb] = first[cur]
                    todo.append(nb)
        table[src] = first
    return table


def build_network(cfg: ScenarioConfig, phase: str, seed: int) -> Network:
    if phase not in PHASE_TOGGLES:
        raise ValueError(f"unknown phase {phase!r}")
    attack_on, defense_on = PHASE_TOGGLES[phase]
    attack_on = attack_on and cfg.attack.variant != "none"
    defense = cfg.defense.mode if defense_on else "none"
    sim = Simulator()
    w = cfg.workload
    scale = cfg.scale
    backend = cfg.backend
    bucket = cfg.pow.bucket_width_s
    devices = cfg.device_classes()
    duration_ns = int(round(w.duration_s * NS))
    window = (int(round(w.warmup_s * NS)), duration_ns)

    def link(a, b, spec) -> Link:
        lk = Link(sim, a, b, spec.bandwidth_mbps * 1e6 * scale, int(round(spec.delay_ms * 1e6)), spec.queue)
        links.append(lk)
        return lk

    if defense == "staticpow":
        d_client, verify = cfg.defense.static_d, True
    elif defense == "adaptive":
        d_client, verify = cfg.controller.d_default, True
    else:
        d_client, verify = 0, False
    d_max = max(cfg.controller.d_max, d_client)

    links: list[Link] = []
    routers = {lan.router: Router(sim, lan.router) for lan in cfg.topology.lans}
    switches: dict[str, EdgeSwitch] = {}
    lan_switch: dict[str, str] = {}
    clients: list[Client] = []
    attackers: list = []
    srv_spec = cfg.topology.server
    server_ip = int(ipaddress.IPv4Address(srv_spec.ip))
    server_mode = {
        "none": ServerMode.PLAIN_BACKLOG,
        "syncookies": ServerMode.SYN_COOKIES,
    }.get(defense, ServerMode.POW_AWARE)
    server = Server(
        sim, "server", server_ip, srv_spec.port, server_mode, rng_stream(seed, "server"),
        backlog=srv_spec.backlog, proven_reserve=srv_spec.proven_reserve,
        half_open_timeout_s=srv_spec.half_open_timeout_s, service_time_s=srv_spec.service_time_s,
        cpus=srv_spec.cpus, cookie_cost_s=srv_spec.cookie_cost_s, cookie_bucket_width=bucket,
        response_bytes=w.response_bytes,
    )
    server_link = None
    lan_hosts: dict[str, list[int]] = {}
    uplinks: dict[str, Link] = {}

    a = cfg.attack
    stop_s = w.duration_s if a.stop_s is None else min(a.stop_s, w.duration_s)
    n_att = cfg.lan(a.lan).attackers if attack_on else 0
    total_rate = a.rate_pps * scale
    for lan in cfg.topology.lans:
        prefix = Prefix.parse(lan.prefix)
        sw = EdgeSwitch(sim, lan.switch, prefix, d_client, verify, backend, bucket,
                        cfg.defense.control_delay_s, cfg.defense.table_capacity)
        switches[lan.switch] = sw
        lan_switch[lan.name] = lan.switch
        router = routers[lan.router]
        up = link(sw, router, lan.uplink)
        uplinks[lan.name] = up
        sw.default = up.channel_from(sw)
        hosts = []

        def attach(host, spec, _sw=sw, _hosts=hosts):
            lk = link(host, _sw, spec)
            host.out = lk.channel_from(host)
            _sw.attach_host(host.ip, lk.channel_from(_sw), lk.channel_from(host))
            _hosts.append(host.ip)
            return lk

        if lan.name == srv_spec.lan:
            server_link = attach(server, srv_spec.link)
        think = w.think_time_by_lan.get(lan.name, w.think_time_s)
        for i in range(lan.clients):
            name = f"{lan.name}{i + 1}"
            c = Client(
                sim, name, _host_ip(prefix, CLIENT_HOST_OFFSET + i), lan.name, server_ip, srv_spec.port,
                devices[lan.device_class], rng_stream(seed, f"client:{name}"), window,
                d_default=d_client, ladder=w.ladder, d_max=d_max, timeout_s=w.timeout_s,
                think_time_s=think, think_jitter=w.think_jitter, backend=backend, bucket_width=bucket,
                real_solve_max_d=w.real_solve_max_d, request_bytes=w.request_bytes,
            )
            attach(c, lan.access)
            clients.append(c)
        if attack_on and lan.name == a.lan:
            profile = AttackProfile(
                variant=Variant(a.variant),
                rate=(a.curl_rate if a.variant == "curl" else total_rate / max(n_att, 1)),
                start_at=a.start_s, stop_at=stop_s,
                spoof_space=Prefix.parse(a.spoof_space) if a.variant == "cflood-spoof" else None,
                nonce_policy=NoncePolicy(a.nonce_policy), spacing=a.spacing,
                curl_timeout=a.curl_timeout_s, attacker_solves_at=a.attacker_solves_at,
                attacker_hash_rate=a.attacker_hash_rate,
            )
            # interleave the sources evenly
            step = NS / (profile.effective_rate * n_att)
            for j in range(lan.attackers):
                name = f"{lan.name}-att{j + 1}"
                att = make_attacker(sim, name, _host_ip(prefix, ATTACKER_HOST_OFFSET + j), server_ip,
                                    srv_spec.port, profile, rng_stream(seed, f"attacker:{name}"),
                                    phase_ns=int(j * step))
                attach(att, lan.access)
                attackers.append(att)
        lan_hosts[lan.name] = hosts

    # inter-router routes
    core_edges = [(c.a, c.b) for c in cfg.topology.core]
    core_links = {}
    for c in cfg.topology.core:
        lk = link(routers[c.a], routers[c.b], c.link)
        core_links[(c.a, c.b)] = lk
        core_links[(c.b, c.a)] = lk
    hops = _next_hops(list(routers), core_edges)
    for lan in cfg.topology.lans:
        sw = switches[lan.switch]
        for rname, router in routers.items():
            if rname == lan.router:
                up = uplinks[lan.name]
                for ip in lan_hosts[lan.name]:
                    router.add_route(ip, up.channel_from(router))
            else:
                nh = hops[rname][lan.router]
                lk = core_links[(rname, nh)]
                for ip in lan_hosts[lan.name]:
                    router.add_route(ip, lk.channel_from(router))
    sink = Sink()
    sink_router = cfg.topology.sink.router
    lk = link(routers[sink_router], sink, cfg.topology.sink.link)
    routers[sink_router].default = lk.channel_from(routers[sink_router])
    for rname, router in routers.items():
        if rname != sink_router:
            router.default = core_links[(rname, hops[rname][sink_router])].channel_from(router)

    net = Network(sim, cfg, phase, seed, server, clients, attackers, switches, lan_switch,
                  routers, sink, links, server_link, attack_on=attack_on, defense=defense)

    if defense == "adaptive":
        params = cfg.controller_params()
        states = [
            PrefixState(Prefix.parse(lan.prefix), lan.switch, devices[lan.device_class])
            for lan in cfg.topology.lans
        ]
        by_lan_prefix = {Prefix.parse(lan.prefix): lan.name for lan in cfg.topology.lans}

        def on_command(cmd: Command) -> None:
            if not w.advisory:
                return
            lan_name = by_lan_prefix[cmd.prefix]
            targets = [c for c in clients if c.lan == lan_name]
            at = sim.now + int(round(w.advisory_delay_s * NS))

            def deliver() -> None:
                net.advisories.append((sim.now, lan_name, cmd.d))
                for c in targets:
                    c.advise(cmd.d)

            sim.schedule(at, deliver)

        net.controller = SdnController(sim, params, switches, states, on_command)
        net.controller.start()

    jitter = rng_stream(seed, "start-jitter")
    for c in clients:
        sim.schedule(int(jitter.uniform(0, w.start_jitter_s) * NS), c.start)
    for att in attackers:
        att.start()
    return net


def collect(net: Network, run_id: int) -> RunMetrics:
    cfg = net.cfg
    w = cfg.workload
    window_s = w.duration_s - w.warmup_s
    m = RunMetrics(
        run_id=run_id, seed=net.seed, scenario=cfg.name, defense=defense_label(cfg),
        attack=cfg.attack.variant, phase=net.phase, window_s=window_s,
        fingerprint=cfg.fingerprint(),
    )
    for c in net.clients:
        st = c.stats
        m.clients.append(
            ClientResult(
                c.name, c.lan, st.attempts, st.successes, st.successes / window_s,
                st.solve_delay_sum / st.solve_delay_n if st.solve_delay_n else None,
                st.solve_delay_n,
            )
        )
    for lan, sw in net.lan_switch.items():
        cnt = net.switches[sw].counters
        m.switches[lan] = (cnt.syns_seen, cnt.syns_dropped)
    if net.controller is not None:
        core = net.controller.core
        m.rule_installs = len(core.installs)
        m.rule_retracts = len(core.retracts)
        m.telemetry_pulls = net.controller.telemetry_pulls
        if net.attack_on and core.installs:
            m.detection_latency_s = (core.installs[0][0] - int(round(cfg.attack.start_s * NS))) / NS
    for ch in net.channels:
        m.link_drops[ch.name] = ch.packets_dropped
    egress = net.server_egress()
    m.extra = {
        "server": net.server.stats,
        "server_egress_synacks": egress.offered_by_kind.get(int(Kind.SYN_ACK), 0),
        "attack_emitted": sum(getattr(a, "emitted", 0) for a in net.attackers),
        "attack_received": sum(getattr(a, "received", 0) for a in net.attackers),
        "sink_packets": net.sink.packets,
        "advisories": list(net.advisories),
    }
    return m


def run_once(cfg: ScenarioConfig, phase: str, run_index: int = 0, seed: "int | None" = None,
             keep_network: bool = False):
    """One simulation of one phase. Returns RunMetrics (and the Network if asked)."""
    seed = run_seed(cfg.seed, run_index) if seed is None else seed
    net = build_network(cfg, phase, seed)
    net.sim.run_until(int(round(cfg.workload.duration_s * NS)))
    m = collect(net, run_index)
    log.info("run %s/%s seed=%d overall=%.2f TPS", phase, run_index, seed, m.overall_tps())
    return (m, net) if keep_network else m


def run_matrix(
    cfg: ScenarioConfig,
    phases=metrics.PHASES,
    runs: "int | None" = None,
    out_dir: "str | Path | None" = None,
) -> tuple[ExperimentQuad, list[RunMetrics]]:
    runs = cfg.runs if runs is None else runs
    results: dict[str, list[RunMetrics]] = {p: [] for p in phases}
    out = Path(out_dir) if out_dir is not None else None
    for i in range(runs):
        for phase in phases:
            m = run_once(cfg, phase, i)
            results[phase].append(m)
            if out is not None:
                metrics.write_runs_csv([m], out / "runs" / f"{phase}_{i:03d}.csv")
    quad = metrics.compute_quad(results)
    all_runs = [m for p in phases for m in results[p]]
    if out is not None:
        metrics.write_runs_csv(all_runs, out / "runs.csv")
        metrics.write_summary_csv([quad], out / "summary.csv")
    return quad, all_runs
