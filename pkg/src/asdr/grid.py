"""Multi-resolution hash-grid encoding of 3D points.

Each level l covers the unit cube with an N_l^3 lattice. Vertex features live
in a table of T entries. Coarse levels whose power-of-two padded vertex domain
fits in T are stored densely (collision free); finer levels use the spatial
hash ``(x*p1) ^ (y*p2) ^ (z*p3) mod T`` evaluated in 64-bit wrap-around
arithmetic.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numba
import numpy as np

from .arch.layout import dense_logical_index, padded_bits

DEFAULT_PRIMES = (1, 2654435761, 805459861)

GRID_MAGIC = b"ASDRGRID"
GRID_VERSION = 1
_GRID_HEADER = struct.Struct("<8sIIIIIIQ")

# corner c of a voxel is base + (c & 1, (c >> 1) & 1, (c >> 2) & 1)
CORNER_OFFSETS = np.array([[c & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)], dtype=np.int64)


class ConfigError(ValueError):
    """Invalid grid, network, renderer or architecture configuration."""


@dataclass(frozen=True)
class GridConfig:
    levels: int = 16
    table_size: int = 2**19
    features: int = 4
    n_min: int = 16
    n_max: int = 512
    primes: tuple[int, int, int] = DEFAULT_PRIMES
    seed: int = 0

    def __post_init__(self):
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        t = self.table_size
        if t < 1 or t & (t - 1):
            raise ConfigError(f"table_size must be a power of two, got {t}")
        if self.features < 1:
            raise ConfigError("features must be >= 1")
        if not 1 <= self.n_min <= self.n_max:
            raise ConfigError("need 1 <= n_min <= n_max")
        if self.levels == 1 and self.n_min != self.n_max:
            raise ConfigError("a single level needs n_min == n_max")
        p1, p2, p3 = self.primes
        if p1 < 1:
            raise ConfigError("p1 must be >= 1")
        for p in (p2, p3):
            if p % 2 == 0 or p <= 2**16:
                raise ConfigError("p2 and p3 must be odd and > 2^16")
        if any(p >= 2**64 for p in self.primes):
            raise ConfigError("primes must fit in 64 bits")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit value")

    @property
    def encoding_dim(self) -> int:
        return self.levels * self.features


@dataclass(frozen=True)
class LevelSpec:
    index: int
    resolution: int
    mapping_mode: str  # "dense" or "hashed"

    @property
    def vertex_count(self) -> int:
        return (self.resolution + 1) ** 3

    @property
    def dense(self) -> bool:
        return self.mapping_mode == "dense"


def level_mapping_mode(resolution: int, table_size: int) -> str:
    """``dense`` iff the power-of-two padded vertex domain fits in the table."""
    return "dense" if (1 << (3 * padded_bits(resolution))) <= table_size else "hashed"


def build_levels(config: GridConfig) -> list[LevelSpec]:
    """Geometric resolution schedule from n_min to n_max."""
    L = config.levels
    if L == 1:
        res = [config.n_min]
    else:
        growth = math.exp((math.log(config.n_max) - math.log(config.n_min)) / (L - 1))
        res = []
        for l in range(L):
            v = config.n_min * growth**l
            # guard exact powers (e.g. 16 * 2 = 32) against 31.999999
            res.append(int(math.floor(v * (1.0 + 1e-12))))
        res[0] = config.n_min
        res[-1] = config.n_max
        for l in range(1, L):
            res[l] = min(max(res[l], res[l - 1]), config.n_max)
    return [LevelSpec(l, n, level_mapping_mode(n, config.table_size)) for l, n in enumerate(res)]


def hash_index(v, config: GridConfig):
    """Spatial hash of integer vertex coordinates, shape (..., 3) -> (...).

    Products wrap at 64 bits, then the XOR is reduced modulo T.
    """
    v = np.asarray(v)
    if np.any(v < 0):
        raise ValueError("vertex coordinates must be non-negative")
    u = v.astype(np.uint64)
    p = np.array(config.primes, dtype=np.uint64)
    h = (u[..., 0] * p[0]) ^ (u[..., 1] * p[1]) ^ (u[..., 2] * p[2])
    idx = (h & np.uint64(config.table_size - 1)).astype(np.int64)
    return idx if idx.ndim else int(idx)


def table_index(v, level: LevelSpec, config: GridConfig):
    """Table row for vertex ``v`` at ``level`` (dense or hashed)."""
    if level.dense:
        return dense_logical_index(v, level.resolution)
    return hash_index(v, config)


@dataclass(frozen=True)
class VoxelQuery:
    base: np.ndarray  # (3,) int
    frac: np.ndarray  # (3,) float
    corners: np.ndarray  # (8, 3) int
    weights: np.ndarray  # (8,) float


def voxel_coords(points, resolution: int):
    """Vectorised voxel lookup: returns (base int64 (...,3), frac (...,3)).

    Points on the upper face of the cube map to the last voxel with frac 1.
    """
    scaled = np.asarray(points, dtype=np.float64) * resolution
    base = np.clip(np.floor(scaled), 0, resolution - 1).astype(np.int64)
    return base, scaled - base


def trilinear_weights(frac):
    """Weights for the 8 corners in CORNER_OFFSETS order, shape (..., 8)."""
    frac = np.asarray(frac, dtype=np.float64)
    fx, fy, fz = frac[..., 0:1], frac[..., 1:2], frac[..., 2:3]
    o = CORNER_OFFSETS
    wx = np.where(o[:, 0] == 1, fx, 1.0 - fx)
    wy = np.where(o[:, 1] == 1, fy, 1.0 - fy)
    wz = np.where(o[:, 2] == 1, fz, 1.0 - fz)
    return wx * wy * wz


def voxel_of(p, level: LevelSpec) -> VoxelQuery:
    base, frac = voxel_coords(np.asarray(p, dtype=np.float64).reshape(3), level.resolution)
    return VoxelQuery(base, frac, base + CORNER_OFFSETS, trilinear_weights(frac))


@dataclass
class EmbeddingTable:
    level: LevelSpec
    entries: np.ndarray = field(repr=False)  # (T, F)


def make_tables(config: GridConfig, *, scale: float = 1e-4, dtype=np.float32,
                zero: bool = False) -> list[EmbeddingTable]:
    """Tables filled with seeded uniform noise in [-scale, scale] (or zeros)."""
    rng = np.random.default_rng(config.seed)
    tables = []
    for lvl in build_levels(config):
        shape = (config.table_size, config.features)
        if zero:
            entries = np.zeros(shape, dtype=dtype)
        else:
            entries = rng.uniform(-scale, scale, size=shape).astype(dtype)
        tables.append(EmbeddingTable(lvl, entries))
    return tables


def _check_tables(tables: Sequence[EmbeddingTable], config: GridConfig):
    if len(tables) != config.levels:
        raise ConfigError(f"expected {config.levels} tables, got {len(tables)}")
    for tab in tables:
        if tab.entries.shape != (config.table_size, config.features):
            raise ConfigError(f"table {tab.level.index} has shape {tab.entries.shape}")


def encode(points, tables: Sequence[EmbeddingTable], config: GridConfig) -> np.ndarray:
    """Encode points (P, 3) in the unit cube into features (P, L*F), coarse to fine."""
    _check_tables(tables, config)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = np.empty((pts.shape[0], config.levels * config.features), dtype=np.float64)
    F = config.features
    for tab in tables:
        lvl = tab.level
        base, frac = voxel_coords(pts, lvl.resolution)
        w = trilinear_weights(frac)  # (P, 8)
        corners = base[:, None, :] + CORNER_OFFSETS  # (P, 8, 3)
        idx = table_index(corners, lvl, config)
        feats = tab.entries[idx].astype(np.float64)  # (P, 8, F)
        out[:, lvl.index * F:(lvl.index + 1) * F] = np.einsum("pc,pcf->pf", w, feats)
    return out


def encode_point(p, tables: Sequence[EmbeddingTable], config: GridConfig) -> np.ndarray:
    return encode(np.asarray(p, dtype=np.float64).reshape(1, 3), tables, config)[0]


def inverse_softplus(x):
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(divide="ignore"):
        out = np.where(x > 20.0, x, np.log(np.expm1(np.minimum(x, 20.0))))
    return np.maximum(out, -20.0)


def logit(c, eps: float = 1e-4):
    c = np.clip(np.asarray(c, dtype=np.float64), eps, 1.0 - eps)
    return np.log(c) - np.log1p(-c)


FieldFn = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


def bake_from_field(field_fn: FieldFn, tables: Sequence[EmbeddingTable], config: GridConfig, *,
                    activation_inverse: bool = False, chunk: int = 1 << 21) -> list[EmbeddingTable]:
    """Write field samples at every lattice vertex into the tables (in place).

    ``field_fn(points) -> (density (P,), rgb (P, 3))``. Each entry becomes
    ``[density, r, g, b, 0, ...]``. Vertices are visited in x-fastest order
    (x + (N+1) y + (N+1)^2 z); on hashed levels the last vertex written to a
    row wins. With ``activation_inverse`` the entry holds softplus^-1(density)
    and logit(rgb) so that the passthrough networks reproduce the field.
    """
    if config.features < 4:
        raise ConfigError("baking needs at least 4 features per entry")
    _check_tables(tables, config)
    for tab in tables:
        n1 = tab.level.resolution + 1
        tab.entries[:] = 0
        if tab.level.dense:
            lin = np.arange(n1**3, dtype=np.int64)
            rows = dense_logical_index(_unravel(lin, n1), tab.level.resolution)
        else:
            # only the last vertex hashed to a row survives, so find those
            # first and evaluate the field at them alone
            winner = _last_writers(n1, np.array(config.primes, dtype=np.uint64), config.table_size)
            rows = np.nonzero(winner >= 0)[0]
            lin = winner[rows]
        for start in range(0, lin.size, chunk):
            sl = slice(start, start + chunk)
            v = _unravel(lin[sl], n1)
            dens, rgb = field_fn(v / tab.level.resolution)
            if activation_inverse:
                dens, rgb = inverse_softplus(dens), logit(rgb)
            tab.entries[rows[sl], 0] = dens
            tab.entries[rows[sl], 1:4] = rgb
    return list(tables)


def _unravel(lin, n1):
    return np.stack([lin % n1, (lin // n1) % n1, lin // (n1 * n1)], axis=-1)


@numba.njit(cache=True)
def _last_writers(n1, primes, table_size):
    """Largest x-fastest linear vertex index hashed to each row (-1 if none)."""
    winner = -np.ones(table_size, np.int64)
    mask = np.uint64(table_size - 1)
    lin = 0
    for z in range(n1):
        hz = np.uint64(z) * primes[2]
        for y in range(n1):
            hyz = (np.uint64(y) * primes[1]) ^ hz
            for x in range(n1):
                winner[np.int64(((np.uint64(x) * primes[0]) ^ hyz) & mask)] = lin
                lin += 1
    return winner


def save_tables(path, tables: Sequence[EmbeddingTable], config: GridConfig) -> None:
    _check_tables(tables, config)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_GRID_HEADER.pack(GRID_MAGIC, GRID_VERSION, config.levels, config.table_size,
                                   config.features, config.n_min, config.n_max, config.seed))
        for tab in tables:
            fh.write(np.ascontiguousarray(tab.entries, dtype="<f4").tobytes())
    tmp.replace(path)


def load_tables(path) -> tuple[GridConfig, list[EmbeddingTable]]:
    data = Path(path).read_bytes()
    if len(data) < _GRID_HEADER.size:
        raise ValueError("truncated grid file")
    magic, version, L, T, F, n_min, n_max, seed = _GRID_HEADER.unpack_from(data)
    if magic != GRID_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != GRID_VERSION:
        raise ValueError(f"unsupported grid file version {version}")
    config = GridConfig(L, T, F, n_min, n_max, seed=seed)
    body = np.frombuffer(data, dtype="<f4", offset=_GRID_HEADER.size)
    if body.size != L * T * F:
        raise ValueError("grid file size does not match header")
    body = body.reshape(L, T, F)
    tables = [EmbeddingTable(lvl, body[lvl.index].astype(np.float32)) for lvl in build_levels(config)]
    return config, tables
