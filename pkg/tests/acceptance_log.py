"""Collects one verdict per acceptance criterion for the end-of-run summary."""

from __future__ import annotations

_results: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, detail: str) -> None:
    _results[n] = (ok, detail)
    print(line(n))


def line(n: int) -> str:
    ok, detail = _results[n]
    return f"criterion {n}: {'PASS' if ok else 'FAIL'}: {detail}"


def summary_lines() -> list[str]:
    return [line(n) for n in sorted(_results)]
