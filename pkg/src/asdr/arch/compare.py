"""Speedup and energy ratios of simulated configurations against a baseline."""

from __future__ import annotations

import csv
import io

from .sim import SimStats

COMPARE_FIELDS = ("label", "cycles", "energy_total", "speedup", "energy_ratio")


def compare(stats: list[SimStats], baseline: int | str = 0) -> list[dict]:
    """One row per entry, in input order; ratios are baseline / entry."""
    if not stats:
        raise ValueError("compare needs at least one SimStats")
    if isinstance(baseline, str):
        matches = [i for i, s in enumerate(stats) if s.label == baseline]
        if not matches:
            raise ValueError(f"no entry labelled {baseline!r}")
        baseline = matches[0]
    ref = stats[baseline]
    rows = []
    for s in stats:
        rows.append({
            "label": s.label,
            "cycles": s.cycles,
            "energy_total": s.energy_total,
            "speedup": ref.cycles / s.cycles if s.cycles else float("inf"),
            "energy_ratio": ref.energy_total / s.energy_total if s.energy_total else float("inf"),
        })
    return rows


def compare_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COMPARE_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()
