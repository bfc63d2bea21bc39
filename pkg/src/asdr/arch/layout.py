"""Physical placement of the per-level embedding tables on memory crossbars.

Every level owns a region of ``T`` consecutive physical entries starting at
``level * T``. A crossbar holds ``xbar_rows`` consecutive entries, so the
crossbar id of a physical address is ``addr // xbar_rows``.

Dense (de-hashed) levels store the padded ``2^k`` per-axis vertex domain
directly and fill the rest of the region with replicas. Their local address
is the bit string::

    [copy id | x0 y0 z0 | x >> 1 | y >> 1 | z >> 1]

where ``x0 y0 z0`` are the coordinate LSBs. The eight corners of a voxel
differ in exactly those three bits, so they land in eight different
crossbars whenever a crossbar is no larger than one eighth of a copy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def padded_bits(resolution: int) -> int:
    """ceil(log2(N + 1)): address bits per axis for vertex coords 0..N."""
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    return int(resolution).bit_length()


def dense_logical_index(v, resolution: int):
    """Canonical dense index x + X*y + X*Y*z with padded extents X = Y = 2^k."""
    v = np.asarray(v)
    if np.any(v < 0) or np.any(v > resolution):
        raise ValueError(f"vertex outside [0, {resolution}]^3")
    k = padded_bits(resolution)
    v = v.astype(np.int64)
    idx = v[..., 0] | (v[..., 1] << k) | (v[..., 2] << (2 * k))
    return idx if idx.ndim else int(idx)


@dataclass(frozen=True)
class LevelLayout:
    index: int
    resolution: int
    mapping_mode: str  # "dense" or "hashed"
    axis_bits: int  # k; meaningful for dense levels
    copies: int
    base: int  # first physical entry of this level's region
    entries: int  # region size (T)
    xbar_first: int
    xbar_last: int  # inclusive

    @property
    def dense(self) -> bool:
        return self.mapping_mode == "dense"

    @property
    def copy_span(self) -> int:
        """Entries occupied by one copy of a dense table (padded domain)."""
        return 1 << (3 * self.axis_bits)


@dataclass(frozen=True)
class PhysicalLayout:
    levels: tuple[LevelLayout, ...]
    xbar_rows: int
    table_size: int
    primes: tuple[int, int, int]
    hybrid: bool

    @property
    def num_xbars(self) -> int:
        return self.levels[-1].xbar_last + 1 if self.levels else 0

    @property
    def dense_mask(self) -> np.ndarray:
        return np.array([lv.dense for lv in self.levels], dtype=np.bool_)

    @property
    def copies(self) -> np.ndarray:
        return np.array([lv.copies for lv in self.levels], dtype=np.int64)


class LayoutError(ValueError):
    pass


def plan_layout(grid, arch, *, hybrid: bool = True) -> PhysicalLayout:
    """Assign each level a mapping mode, replica count and crossbar range.

    With ``hybrid=False`` every level is hashed (the strawman mapping).
    """
    from ..grid import build_levels

    T = grid.table_size
    rows = arch.xbar_rows
    if T % rows:
        raise LayoutError("table_size must be a multiple of xbar_rows")
    if arch.capacity < grid.levels * T:
        raise LayoutError(
            f"capacity {arch.capacity} entries < {grid.levels} levels x {T} entries")
    out = []
    for spec in build_levels(grid):
        k = padded_bits(spec.resolution)
        padded = 1 << (3 * k)
        dense = hybrid and padded <= T
        # T and padded are powers of two, so T // padded is already one
        copies = T // padded if dense else 1
        base = spec.index * T
        out.append(LevelLayout(spec.index, spec.resolution, "dense" if dense else "hashed", k,
                               copies, base, T, base // rows, (base + T - 1) // rows))
    return PhysicalLayout(tuple(out), rows, T, tuple(grid.primes), hybrid)


def dehash_address(v, level: LevelLayout, copy: int = 0):
    """Local (within-level) address of vertex ``v`` on a dense level."""
    if not level.dense:
        raise LayoutError(f"level {level.index} is hashed; dehash_address needs a dense level")
    v = np.asarray(v)
    if np.any(v < 0) or np.any(v > level.resolution):
        raise ValueError("vertex outside the level's lattice")
    copy = np.asarray(copy)
    if np.any(copy < 0) or np.any(copy >= level.copies):
        raise ValueError(f"copy id must be in [0, {level.copies})")
    k = level.axis_bits
    v = v.astype(np.int64)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    m = k - 1
    lsb = ((x & 1) << 2) | ((y & 1) << 1) | (z & 1)
    addr = (copy.astype(np.int64) << (3 * k)) | (lsb << (3 * m)) | ((x >> 1) << (2 * m)) \
        | ((y >> 1) << m) | (z >> 1)
    return addr if addr.ndim else int(addr)


def physical_address(v, level: LevelLayout, layout: PhysicalLayout, copy: int = 0):
    """Global physical address of vertex ``v`` (dense or hashed level)."""
    if level.dense:
        return level.base + dehash_address(v, level, copy)
    u = np.asarray(v).astype(np.uint64)
    p = np.array(layout.primes, dtype=np.uint64)
    h = (u[..., 0] * p[0]) ^ (u[..., 1] * p[1]) ^ (u[..., 2] * p[2])
    local = (h & np.uint64(layout.table_size - 1)).astype(np.int64)
    return level.base + (local if local.ndim else int(local))


def crossbar_of(addr, layout: PhysicalLayout):
    """(crossbar id, row) of a global physical address."""
    return addr // layout.xbar_rows, addr % layout.xbar_rows


def assign_copy(lane, level: LevelLayout):
    """Round-robin replica choice for a request lane."""
    return lane % level.copies


def storage_utilization(layout: PhysicalLayout) -> float:
    """Useful entries over allocated entries; replicas count as useful."""
    useful = 0
    for lv in layout.levels:
        verts = (lv.resolution + 1) ** 3
        useful += lv.copies * verts if lv.dense else min(lv.entries, verts)
    return useful / sum(lv.entries for lv in layout.levels)
