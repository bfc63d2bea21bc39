"""Reference model of the per-level register cache.

Each level has a small fully associative buffer with LRU replacement. A
batch of requests is compared against every entry at once. Requests in one
batch that repeat an earlier tag of the same batch are served by that
earlier lookup and count as hits. Distinct tags are looked up in order of
first appearance, so the miss set of a batch only shrinks as capacity grows.

The simulator kernel implements the same rules; this module is the
readable version used to cross-check it.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Sequence


@dataclass(frozen=True)
class AccessRequest:
    level: int
    tag: int  # logical table index (replica independent)
    xbar: int = 0
    row: int = 0
    copy: int = 0
    issue_cycle: int = 0


class LRUCache:
    """Fully associative LRU set of tags."""

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self._entries: OrderedDict[int, None] = OrderedDict()

    def __len__(self):
        return len(self._entries)

    def __contains__(self, tag):
        return tag in self._entries

    def access(self, tag: int) -> bool:
        """Look up ``tag``; refresh on hit, insert (evicting the LRU entry) on miss."""
        if self.capacity == 0:
            return False
        if tag in self._entries:
            self._entries.move_to_end(tag)
            return True
        if len(self._entries) >= self.capacity:
            self._entries.popitem(last=False)
        self._entries[tag] = None
        return False

    def entries(self) -> list[tuple[int, int]]:
        """(tag, age) pairs, age 0 = most recently used."""
        tags = list(self._entries)
        return [(t, len(tags) - 1 - i) for i, t in enumerate(tags)]


@dataclass
class CacheState:
    levels: list[LRUCache] = field(default_factory=list)

    @classmethod
    def create(cls, sizes: Sequence[int]) -> "CacheState":
        return cls([LRUCache(c) for c in sizes])


def cache_lookup(batch: Iterable[AccessRequest], state: CacheState):
    """Apply one batch; returns (hit flags, miss requests, state).

    With capacity 0 the cache is absent and every request misses, including
    repeats inside the batch.
    """
    batch = list(batch)
    hit = [False] * len(batch)
    seen: set[tuple[int, int]] = set()
    for i, req in enumerate(batch):
        cache = state.levels[req.level]
        if cache.capacity == 0:
            continue
        key = (req.level, req.tag)
        if key in seen:
            hit[i] = True
            continue
        seen.add(key)
        hit[i] = cache.access(req.tag)
    misses = [r for r, h in zip(batch, hit) if not h]
    return hit, misses, state
