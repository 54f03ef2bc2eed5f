from __future__ import annotations

import csv
import math
from decimal import Decimal
from fractions import Fraction

import pytest

import oracles
from synpow import metrics
from synpow.metrics import (
    ClientResult, MismatchedConfigs, RunMetrics, analytic_cost_table, ci95_halfwidth, compute_quad,
    default_table_rows, read_runs_csv, utility, write_runs_csv, write_summary_csv,
)
from synpow.protocol import DEVICE_CLASSES, DeviceClass


def run(phase, run_id=0, tps=(50.0, 40.0, 30.0), fp="abc", window=20.0, defense="adaptive"):
    m = RunMetrics(run_id, 11 + run_id, "reference", defense, "cflood-spoof", phase, window, fp)
    for lan, v in zip("ABC", tps):
        for k in range(3):
            succ = int(v * window)
            m.clients.append(ClientResult(f"{lan}{k + 1}", lan, succ, succ, succ / window))
    m.switches = {"A": (10, 0), "B": (0, 0), "C": (100, 97)}
    m.link_drops = {"x": 3, "y": 4}
    return m


def test_analytic_examples():
    rows = {(r.device, r.d): r for r in analytic_cost_table(default_table_rows())}
    r = rows[("rpi4", 24)]
    assert r.ucpu[0] == Decimal("11.2")
    r = rows[("phone", 22)]
    assert r.t_conn_s == Decimal("0.084") and r.ucpu[1] == Decimal("8.4")
    r = rows[("iot_mcu", 20)]
    assert r.t_conn_s == Decimal("1.049") and r.ucpu[1] == Decimal("100.0")
    r = rows[("iot_mcu", 18)]
    assert (r.t_conn_s, r.ucpu[0], r.ucpu[1]) == (Decimal("0.262"), Decimal("5.2"), Decimal("26.2"))


def half_up(x: float, places: int) -> str:
    q = Fraction(x) * 10 ** places
    n = math.floor(q + Fraction(1, 2))
    return f"{n / 10 ** places:.{places}f}"


def test_analytic_matches_oracle():
    for row in analytic_cost_table(default_table_rows()):
        t, u = oracles.cost_row(row.hash_rate, row.d, metrics.ANALYTIC_RATES)
        assert str(row.t_conn_s) == half_up(t, 3)
        assert [str(x) for x in row.ucpu] == [half_up(v, 1) for v in u]


def test_analytic_extra_rows_and_zero_d():
    fpga = DeviceClass("fpga", 1e9)
    rows = analytic_cost_table(default_table_rows([fpga], [28]))
    assert len(rows) == 9 and rows[-1].t_conn_s == Decimal("0.268")
    zero = analytic_cost_table(default_table_rows(None, [0]))[8:]
    assert {r.device for r in zero} == set(DEVICE_CLASSES)
    for r in zero:
        assert float(r.t_conn_s) == pytest.approx(1 / r.hash_rate, abs=5e-4)


def test_analytic_csv(tmp_path):
    p = tmp_path / "t.csv"
    metrics.write_analytic_csv(analytic_cost_table(default_table_rows()), p)
    rows = list(csv.reader(p.open()))
    assert rows[0] == metrics.ANALYTIC_COLUMNS
    assert len(rows) == 9
    assert rows[1][:4] == ["iot_mcu", "1000000.0", "18", "0.262"]


def test_utility_examples():
    assert utility(10, 2, 0.5) == 4.0
    assert utility(7.5, 3.0, 1.0) == 7.5
    assert utility(7.5, 3.0, 0.0) == -3.0
    with pytest.raises(ValueError):
        utility(1, 1, 1.5)


def test_identical_runs_give_zero_quad():
    sets = {ph: [run(ph, i) for i in range(3)] for ph in metrics.PHASES}
    q = compute_quad(sets)
    for lan in ("A", "B", "C", "overall"):
        assert q.E(lan) == 0 and q.O(lan) == 0
        assert q.U(lan, 0.3) == 0


def test_quad_sign_and_ci():
    sets = {
        "baseline": [run("baseline", i, (55, 51, 51)) for i in range(3)],
        "overhead": [run("overhead", i, (54, 50, 50)) for i in range(3)],
        "unmitigated": [run("unmitigated", i, (20, 20, 0)) for i in range(3)],
        "mitigated": [run("mitigated", i, (50, 45, 10 + i)) for i in range(3)],
    }
    q = compute_quad(sets)
    assert q.E("C") == pytest.approx(11) and q.E("C") > 0
    assert q.O("A") == pytest.approx(1)
    assert q.rows["C"].ci95["qos_mitigated"] == pytest.approx(ci95_halfwidth([10, 11, 12]))
    assert q.rows["A"].ci95["E"] == 0.0


def test_single_run_ci_absent():
    q = compute_quad({"baseline": [run("baseline")]})
    assert q.rows["A"].means["qos_baseline"] == 50.0
    assert q.rows["A"].ci95["qos_baseline"] is None
    assert q.E("A") is None


def test_mismatch_detected():
    with pytest.raises(MismatchedConfigs):
        compute_quad({"baseline": [run("baseline")], "overhead": [run("overhead", fp="zzz")]})
    with pytest.raises(MismatchedConfigs):
        compute_quad({"baseline": [run("baseline")], "overhead": [run("overhead", window=10.0)]})
    with pytest.raises(ValueError):
        compute_quad({"baseline": []})


def test_ci_matches_t_table():
    # t_{0.975,4} = 2.776
    assert ci95_halfwidth([1, 2, 3, 4, 5]) == pytest.approx(2.776 * 1.5811 / 5 ** 0.5, rel=1e-3)
    assert ci95_halfwidth([3.0]) is None


def test_runs_csv_schema_and_round_trip(tmp_path):
    p = tmp_path / "runs.csv"
    runs = [run("baseline", 0), run("mitigated", 1, (1 / 3, 0.1, 2.5))]
    runs[1].detection_latency_s = 2.0000000001
    write_runs_csv(runs, p)
    header = p.read_text().splitlines()[0].split(",")
    assert header == metrics.RUN_COLUMNS
    back = read_runs_csv(p)
    flat = [row for r in runs for row in r.rows()]
    assert len(back) == len(flat) == 18
    for rec, row in zip(back, flat):
        assert [rec[k] for k in metrics.RUN_COLUMNS] == row


def test_empty_client_set_header_only(tmp_path):
    p = tmp_path / "e.csv"
    m = run("baseline")
    m.clients = []
    write_runs_csv([m], p)
    assert p.read_text() == ",".join(metrics.RUN_COLUMNS) + "\n"


def test_same_runs_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_runs_csv([run("baseline")], a)
    write_runs_csv([run("baseline")], b)
    assert a.read_bytes() == b.read_bytes()


def test_summary_csv_columns(tmp_path):
    p = tmp_path / "s.csv"
    q = compute_quad({ph: [run(ph, i) for i in range(2)] for ph in metrics.PHASES})
    write_summary_csv([q], p)
    rows = list(csv.reader(p.open()))
    assert rows[0] == metrics.SUMMARY_COLUMNS
    assert [r[2] for r in rows[1:]] == ["A", "B", "C", "overall"]


def test_unwritable_path_names_it(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        write_runs_csv([run("baseline")], blocker / "sub" / "r.csv")


def test_early_drop_ratio():
    m = run("baseline")
    assert m.early_drop_ratio("C") == 0.97
    assert m.early_drop_ratio("B") == 0.0
    assert m.link_drops_total == 7
