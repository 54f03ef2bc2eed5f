from __future__ import annotations

import pytest
import yaml

from synpow.runner import apply_attack_flag, apply_defense_flag, build_network, run_seed
from synpow.scenario import ConfigError, load_config, parse_config


@pytest.fixture(scope="module")
def ref():
    return load_config()


def test_reference_topology(ref):
    lans = {lan.name: lan for lan in ref.topology.lans}
    assert [lans[n].clients for n in "ABC"] == [3, 3, 3]
    assert [lans[n].attackers for n in "ABC"] == [0, 0, 3]
    assert {lan.router for lan in ref.topology.lans} == {"r0", "r1", "r2"}
    assert ref.topology.server.lan == "A"
    assert ref.workload.timeout_s == 1.0


def test_missing_attackers_names_field(ref):
    data = ref.model_dump()
    data["topology"]["lans"][2]["attackers"] = 0
    with pytest.raises(ConfigError) as exc:
        parse_config(data)
    assert any(e.startswith("topology.lans.2.attackers") for e in exc.value.errors)
    # no attack requested: same topology is fine
    data["attack"]["variant"] = "none"
    parse_config(data)


def test_every_violation_is_listed(ref):
    data = ref.model_dump()
    data["runs"] = 0
    data["workload"]["warmup_s"] = 500
    data["controller"]["beta"] = 9
    data["topology"]["server"]["link"]["bandwidth_mbps"] = 0
    with pytest.raises(ConfigError) as exc:
        parse_config(data)
    paths = " ".join(exc.value.errors)
    for field in ("runs", "workload.warmup_s", "controller", "topology.server.link"):
        assert field in paths


def test_type_errors_have_paths(ref):
    data = ref.model_dump()
    data["attack"]["rate_pps"] = "fast"
    with pytest.raises(ConfigError) as exc:
        parse_config(data)
    assert any(e.startswith("attack.rate_pps") for e in exc.value.errors)


def test_unknown_field_rejected(ref):
    data = ref.model_dump()
    data["workload"]["bogus"] = 1
    with pytest.raises(ConfigError):
        parse_config(data)


def test_load_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("a: [1, 2")
    with pytest.raises(ConfigError, match="YAML"):
        load_config(bad)


def test_yaml_round_trip(ref, tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text(yaml.safe_dump(ref.model_dump()))
    assert load_config(p) == ref


def test_fingerprint_ignores_toggles_only(ref):
    fp = ref.fingerprint()
    assert apply_defense_flag(ref, "syncookies").fingerprint() == fp
    assert apply_defense_flag(ref, "staticpow:20").fingerprint() == fp
    assert apply_attack_flag(ref, "none").fingerprint() == fp
    assert ref.with_overrides(**{"workload.think_time_s": 0.02}).fingerprint() != fp


def test_defense_flag_parsing(ref):
    assert apply_defense_flag(ref, "staticpow:20").defense.static_d == 20
    for bad in ("staticpow", "firewall"):
        with pytest.raises(ValueError):
            apply_defense_flag(ref, bad)
    with pytest.raises(ValueError):
        apply_attack_flag(ref, "ping")


def test_run_seeds_distinct_and_stable():
    seeds = [run_seed(1, i) for i in range(50)]
    assert len(set(seeds)) == 50
    assert seeds == [run_seed(1, i) for i in range(50)]
    assert run_seed(2, 0) != seeds[0]


def test_phase_isolation(ref):
    for phase, attack, defended in [("baseline", False, False), ("overhead", False, True),
                                    ("unmitigated", True, False), ("mitigated", True, True)]:
        net = build_network(ref, phase, 1)
        assert bool(net.attackers) == attack
        assert (net.controller is not None) == defended


def test_scale_multiplies_rates_and_capacities(ref):
    small = ref.with_overrides(scale=0.1)
    net = build_network(small, "unmitigated", 1)
    full = build_network(ref, "unmitigated", 1)
    assert sum(a.rate for a in net.attackers) == pytest.approx(0.1 * sum(a.rate for a in full.attackers))
    assert net.server_egress().bandwidth_bps == pytest.approx(0.1 * full.server_egress().bandwidth_bps)
