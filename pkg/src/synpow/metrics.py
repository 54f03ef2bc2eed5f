"""Run metrics, the four-phase quad (E/O/U), the analytic PoW cost model and
CSV emission."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from statistics import mean, stdev

from scipy import stats

from .protocol import DEVICE_CLASSES, DeviceClass

PHASES = ("baseline", "unmitigated", "overhead", "mitigated")
LANS = ("A", "B", "C")

RUN_COLUMNS = [
    "run_id", "seed", "scenario", "defense", "attack", "phase", "lan", "client_id",
    "tps", "attempts", "successes", "early_drop_ratio", "rule_installs",
    "rule_retracts", "telemetry_pulls", "detection_latency_s", "link_drops_total",
]
_QUAD_FIELDS = ["qos_baseline", "qos_unmitigated", "qos_overheaded", "qos_mitigated", "E", "O"]
SUMMARY_COLUMNS = ["scenario", "defense", "lan", *_QUAD_FIELDS, *(f"ci95_{f}" for f in _QUAD_FIELDS)]
ANALYTIC_COLUMNS = ["device", "hash_rate", "d", "t_conn_s", "ucpu_r02", "ucpu_r1", "ucpu_r5"]
ANALYTIC_RATES = (0.2, 1.0, 5.0)
# device/difficulty pairs of the published cost table
DEFAULT_TABLE_ROWS = [
    ("iot_mcu", 18), ("iot_mcu", 20),
    ("rpi4", 20), ("rpi4", 24),
    ("phone", 22), ("phone", 24),
    ("laptop", 24), ("laptop", 26),
]


class MismatchedConfigs(ValueError):
    pass


# ---------------------------------------------------------------- analytic model


def t_conn(d: int, hash_rate: float) -> float:
    """Expected solve time per connection, seconds."""
    return 2.0 ** d / hash_rate


def u_cpu(rate: float, d: int, hash_rate: float) -> float:
    """CPU share spent solving at ``rate`` connections/s."""
    return min(1.0, rate * 2.0 ** d / hash_rate)


def round_half_up(x: float, places: int) -> Decimal:
    return Decimal(repr(x)).quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP)


@dataclass(frozen=True)
class CostRow:
    device: str
    hash_rate: float
    d: int
    t_conn_s: Decimal
    ucpu: tuple  # percent, one per rate

    def as_csv(self) -> list[str]:
        return [self.device, repr(float(self.hash_rate)), str(self.d), str(self.t_conn_s), *map(str, self.ucpu)]


def analytic_cost_table(
    rows: "list[tuple[DeviceClass, int]]",
    rates: tuple = ANALYTIC_RATES,
) -> list[CostRow]:
    out = []
    for dev, d in rows:
        if not dev.hash_rate > 0:
            raise ValueError(f"{dev.name}: hash rate must be > 0")
        out.append(
            CostRow(
                dev.name,
                dev.hash_rate,
                d,
                round_half_up(t_conn(d, dev.hash_rate), 3),
                tuple(round_half_up(100.0 * u_cpu(r, d, dev.hash_rate), 1) for r in rates),
            )
        )
    return out


def default_table_rows(
    extra_devices: "list[DeviceClass] | None" = None,
    extra_d: "list[int] | None" = None,
) -> list[tuple[DeviceClass, int]]:
    """The published device/d pairs plus extra rows.

    Extra difficulties apply to the extra devices, or to every built-in device
    when none are given; extra devices without extra difficulties get the
    published d values.
    """
    rows = [(DEVICE_CLASSES[name], d) for name, d in DEFAULT_TABLE_ROWS]
    devices = list(extra_devices or [])
    ds = list(extra_d or [])
    if ds and not devices:
        devices = list(DEVICE_CLASSES.values())
    elif devices and not ds:
        ds = sorted({d for _, d in DEFAULT_TABLE_ROWS})
    rows.extend((dev, d) for dev in devices for d in ds)
    return rows


def write_analytic_csv(rows: list[CostRow], path: "str | Path") -> None:
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ANALYTIC_COLUMNS)
        for r in rows:
            w.writerow(r.as_csv())


# ---------------------------------------------------------------- run metrics


@dataclass
class ClientResult:
    client_id: str
    lan: str
    attempts: int
    successes: int
    tps: float
    solve_delay_mean: "float | None" = None
    solve_delay_n: int = 0


@dataclass
class RunMetrics:
    run_id: int
    seed: int
    scenario: str
    defense: str
    attack: str
    phase: str
    window_s: float
    fingerprint: str
    clients: list[ClientResult] = field(default_factory=list)
    switches: dict = field(default_factory=dict)  # lan -> (seen, dropped)
    rule_installs: int = 0
    rule_retracts: int = 0
    telemetry_pulls: int = 0
    detection_latency_s: "float | None" = None
    link_drops: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def link_drops_total(self) -> int:
        return sum(self.link_drops.values())

    def early_drop_ratio(self, lan: str) -> float:
        seen, dropped = self.switches.get(lan, (0, 0))
        return dropped / seen if seen else 0.0

    def lan_tps(self, lan: str) -> float:
        vals = [c.tps for c in self.clients if c.lan == lan]
        return mean(vals) if vals else 0.0

    def overall_tps(self) -> float:
        return mean(c.tps for c in self.clients) if self.clients else 0.0

    def qos(self, lan: str) -> float:
        return self.overall_tps() if lan == "overall" else self.lan_tps(lan)

    def rows(self) -> list[list]:
        out = []
        for c in self.clients:
            out.append([
                self.run_id, self.seed, self.scenario, self.defense, self.attack, self.phase,
                c.lan, c.client_id, c.tps, c.attempts, c.successes,
                self.early_drop_ratio(c.lan), self.rule_installs, self.rule_retracts,
                self.telemetry_pulls, self.detection_latency_s, self.link_drops_total,
            ])
        return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _open_out(path: "str | Path"):
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        return open(p, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {p}: {exc}") from exc


def write_runs_csv(runs: list[RunMetrics], path: "str | Path") -> None:
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_COLUMNS)
        for r in runs:
            for row in r.rows():
                w.writerow([_fmt(v) for v in row])


_INT_COLS = {"run_id", "seed", "attempts", "successes", "rule_installs", "rule_retracts",
             "telemetry_pulls", "link_drops_total"}
_FLOAT_COLS = {"tps", "early_drop_ratio", "detection_latency_s"}


def read_runs_csv(path: "str | Path") -> list[dict]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rec = {}
            for k, v in row.items():
                if k in _INT_COLS:
                    rec[k] = int(v)
                elif k in _FLOAT_COLS:
                    rec[k] = None if v == "" else float(v)
                else:
                    rec[k] = v
            out.append(rec)
    return out


# ---------------------------------------------------------------- quad and utility


def ci95_halfwidth(values: list[float]) -> "float | None":
    """Student-t 95% half-width of the mean; None for fewer than two values."""
    n = len(values)
    if n < 2:
        return None
    return float(stats.t.ppf(0.975, n - 1)) * stdev(values) / math.sqrt(n)


def utility(E: float, O: float, z: float) -> float:
    if not 0.0 <= z <= 1.0:
        raise ValueError("z must be in [0, 1]")
    return z * E - (1.0 - z) * O


@dataclass
class QuadRow:
    lan: str
    means: dict  # field -> value or None
    ci95: dict


@dataclass
class ExperimentQuad:
    scenario: str
    defense: str
    rows: dict  # lan -> QuadRow

    def E(self, lan: str) -> "float | None":
        return self.rows[lan].means["E"]

    def O(self, lan: str) -> "float | None":
        return self.rows[lan].means["O"]

    def U(self, lan: str, z: float) -> float:
        return utility(self.E(lan) or 0.0, self.O(lan) or 0.0, z)


_PHASE_FIELD = {
    "baseline": "qos_baseline",
    "unmitigated": "qos_unmitigated",
    "overhead": "qos_overheaded",
    "mitigated": "qos_mitigated",
}


def compute_quad(run_sets: dict) -> ExperimentQuad:
    """Per-LAN and overall means with t-intervals over run-level values.

    ``run_sets`` maps phase name to a list of RunMetrics; missing phases give
    empty cells. E and O are computed per repetition (runs paired by run_id,
    which share a seed) and then averaged.
    """
    present = {ph: runs for ph, runs in run_sets.items() if runs}
    if not present:
        raise ValueError("no runs")
    prints = {r.fingerprint for runs in present.values() for r in runs}
    if len(prints) > 1:
        raise MismatchedConfigs("run sets differ beyond attack/defense toggles")
    windows = {r.window_s for runs in present.values() for r in runs}
    if len(windows) > 1:
        raise MismatchedConfigs("run sets use different measurement windows")
    any_run = next(iter(present.values()))[0]
    defenses = {r.defense for ph in ("overhead", "mitigated") for r in present.get(ph, [])}
    defense = defenses.pop() if len(defenses) == 1 else any_run.defense
    rows = {}
    for lan in (*LANS, "overall"):
        means, ci = {}, {}
        per_phase = {}
        for ph, fld in _PHASE_FIELD.items():
            vals = [r.qos(lan) for r in present.get(ph, [])]
            per_phase[ph] = {r.run_id: r.qos(lan) for r in present.get(ph, [])}
            means[fld] = mean(vals) if vals else None
            ci[fld] = ci95_halfwidth(vals)
        for name, (a, b) in {"E": ("mitigated", "unmitigated"), "O": ("baseline", "overhead")}.items():
            ids = sorted(set(per_phase[a]) & set(per_phase[b]))
            diffs = [per_phase[a][i] - per_phase[b][i] for i in ids]
            means[name] = mean(diffs) if diffs else None
            ci[name] = ci95_halfwidth(diffs)
        rows[lan] = QuadRow(lan, means, ci)
    return ExperimentQuad(any_run.scenario, defense, rows)


def write_summary_csv(quads: list[ExperimentQuad], path: "str | Path") -> None:
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for q in quads:
            for lan, row in q.rows.items():
                w.writerow(
                    [q.scenario, q.defense, lan]
                    + [_fmt(row.means[f]) for f in _QUAD_FIELDS]
                    + [_fmt(row.ci95[f]) for f in _QUAD_FIELDS]
                )
