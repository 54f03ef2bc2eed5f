"""Command line entry point.

    synpow --defense adaptive --runs 5 --out results/
    synpow --emit-analytic-table --device fpga:1e9 --d 28

Exit codes: 0 success, 1 configuration/validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import metrics
from .protocol import DeviceClass
from .runner import apply_attack_flag, apply_defense_flag, run_matrix
from .scenario import ConfigError, load_config, validate

log = logging.getLogger("synpow")

FULL_DURATION_S = 120.0


def _device(text: str) -> DeviceClass:
    name, sep, rate = text.partition(":")
    if not sep or not name:
        raise argparse.ArgumentTypeError(f"expected name:hash_rate, got {text!r}")
    try:
        h = float(rate)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad hash rate in {text!r}") from None
    if not h > 0:
        raise argparse.ArgumentTypeError(f"hash rate must be > 0 in {text!r}")
    return DeviceClass(name, h, 1.0)


def _difficulty(text: str) -> int:
    d = int(text)
    if not 0 <= d <= 32:
        raise argparse.ArgumentTypeError("difficulty must be in 0..32")
    return d


def fmt(v: "float | None") -> str:
    return "-" if v is None else f"{v:.2f}"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="synpow", description="SYN proof-of-work defense simulator")
    p.add_argument("--scenario", type=Path, help="scenario YAML (default: bundled reference)")
    p.add_argument("--seed", type=int, help="global seed (u64)")
    p.add_argument("--runs", type=int, help="repetitions per phase")
    p.add_argument("--phases", default=",".join(metrics.PHASES),
                   help="comma-separated subset of " + ",".join(metrics.PHASES))
    p.add_argument("--defense", help="none | syncookies | staticpow:<d> | adaptive")
    p.add_argument("--attack", help="none | curl | cflood | cflood-spoof")
    p.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    p.add_argument("--scale", type=float, help="multiplies attack rates and link capacities")
    p.add_argument("--full", action="store_true", help=f"simulate {FULL_DURATION_S:g} s per run")
    p.add_argument("--emit-analytic-table", action="store_true",
                   help="write the closed-form PoW cost table and exit")
    p.add_argument("--device", type=_device, action="append", default=[],
                   help="extra device for the analytic table, name:hash_rate")
    p.add_argument("--d", type=_difficulty, action="append", default=[],
                   help="extra difficulty for the analytic table")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _configure(args) -> "object":
    cfg = load_config(args.scenario)
    over = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError(["seed: must be an unsigned 64-bit integer"])
        over["seed"] = args.seed
    if args.runs is not None:
        over["runs"] = args.runs
    if args.scale is not None:
        over["scale"] = args.scale
    if args.full:
        over["workload.duration_s"] = FULL_DURATION_S
    if over:
        cfg = cfg.with_overrides(**over)
    try:
        if args.defense:
            cfg = apply_defense_flag(cfg, args.defense)
        if args.attack:
            cfg = apply_attack_flag(cfg, args.attack)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError([str(exc)]) from None
    errs = validate(cfg)
    if errs:
        raise ConfigError(errs)
    return cfg


def main(argv: "list[str] | None" = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.emit_analytic_table:
        rows = metrics.analytic_cost_table(metrics.default_table_rows(args.device, args.d))
        try:
            metrics.write_analytic_csv(rows, args.out / "analytic_table.csv")
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(args.out / "analytic_table.csv")
        return 0

    phases = [p.strip() for p in args.phases.split(",") if p.strip()]
    bad = [p for p in phases if p not in metrics.PHASES]
    try:
        if bad or not phases:
            raise ConfigError([f"phases: unknown phase {p!r}" for p in bad] or ["phases: empty"])
        cfg = _configure(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 1

    try:
        quad, runs = run_matrix(cfg, phases, out_dir=args.out)
    except Exception as exc:  # report, do not trace back, on runtime failure
        log.debug("run failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for lan, row in quad.rows.items():
        m = row.means
        print(f"{lan:8s} base={fmt(m['qos_baseline'])} unmit={fmt(m['qos_unmitigated'])} "
              f"over={fmt(m['qos_overheaded'])} mit={fmt(m['qos_mitigated'])} "
              f"E={fmt(m['E'])} O={fmt(m['O'])}")
    print(f"{len(runs)} runs written to {args.out}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
