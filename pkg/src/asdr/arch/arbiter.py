"""Crossbar conflict arbitration: each crossbar reads one row per cycle."""

from __future__ import annotations

from collections import defaultdict
from typing import Iterable


def arbitrate(requests: Iterable, *, coalesce: bool = True) -> int:
    """Cycles needed to serve one batch of missed reads.

    ``requests`` holds ``(xbar, row)`` pairs or objects with ``xbar`` and
    ``row`` attributes. The busiest crossbar sets the cost. With ``coalesce``
    repeated reads of one row on one crossbar count once; without it every
    request is a separate row activation. An empty batch costs 0 cycles.
    """
    per_xbar: dict[int, list[int]] = defaultdict(list)
    for r in requests:
        x, row = (r.xbar, r.row) if hasattr(r, "xbar") else r
        per_xbar[x].append(row)
    if not per_xbar:
        return 0
    if coalesce:
        return max(len(set(rows)) for rows in per_xbar.values())
    return max(len(rows) for rows in per_xbar.values())
