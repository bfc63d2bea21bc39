"""Accelerator parameters, energy unit costs and their JSON form."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

# Unit costs in arbitrary energy units. Each entry abstracts one block of the
# accelerator; only ratios between configurations are meaningful.
DEFAULT_ENERGY = {
    "addr_gen": 0.02,  # address generator: one vertex address
    "cache_lookup": 0.01,  # register cache: one all-to-all tag compare
    "cache_hit": 0.005,  # register cache: forwarding a cached entry
    "xbar_read": 1.0,  # memory crossbar: one row read
    "fusion_op": 0.3,  # fusion unit: one tri-linear interpolation of one level
    "mac": 0.002,  # MLP engine: one multiply-accumulate in a CIM subengine
    "interp_op": 0.05,  # render engine approximation unit: one color interpolation
    "render_op": 0.1,  # render engine RGB unit: one ray composite
    "static": 2.0,  # whole chip leakage per cycle
}


class ArchConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ArchConfig:
    addr_lanes: int = 64  # addresses generated per cycle
    cache_entries: int = 8  # register-cache entries per level (0 disables)
    cache_per_level: tuple[int, ...] | None = None  # optional per-level override
    xbar_rows: int = 64
    xbar_cols: int = 64
    capacity: int = 16 * 2**19  # table entries across all crossbars
    fusion_units: int = 32  # level interpolations per cycle
    fusion_latency: int = 1
    density_subengines: int = 4
    color_subengines: int = 4
    layer_latency: int = 1  # cycles per MLP layer
    density_layers: int = 2
    color_layers: int = 5
    density_macs: int = 5120  # multiply-accumulates per point
    color_macs: int = 26752
    rgb_units: int = 8  # rays composited in parallel
    approx_units: int = 16  # color interpolations per cycle per ray unit
    adaptive_units: int = 8  # pixels planned per cycle
    addr_buffer: int = 16  # address batches buffered ahead of the crossbars
    embed_buffer: int = 64  # points whose features wait for fusion
    xbar_coalesce: bool = False  # merge same-row reads within a batch
    energy: dict = field(default_factory=lambda: dict(DEFAULT_ENERGY))

    def __post_init__(self):
        for name in ("addr_lanes", "xbar_rows", "xbar_cols", "capacity", "fusion_units",
                     "fusion_latency", "density_subengines", "color_subengines", "layer_latency",
                     "density_layers", "color_layers", "rgb_units", "approx_units",
                     "adaptive_units", "addr_buffer", "embed_buffer"):
            if getattr(self, name) < 1:
                raise ArchConfigError(f"{name} must be >= 1")
        if self.addr_lanes % 8:
            raise ArchConfigError("addr_lanes must be a multiple of 8 (one voxel per 8 lanes)")
        if self.cache_entries < 0 or self.density_macs < 0 or self.color_macs < 0:
            raise ArchConfigError("cache size and MAC counts must be >= 0")
        if self.cache_per_level is not None:
            object.__setattr__(self, "cache_per_level", tuple(int(c) for c in self.cache_per_level))
            if any(c < 0 for c in self.cache_per_level):
                raise ArchConfigError("per-level cache sizes must be >= 0")
        unknown = set(self.energy) - set(DEFAULT_ENERGY)
        if unknown:
            raise ArchConfigError(f"unknown energy keys: {sorted(unknown)}")
        merged = dict(DEFAULT_ENERGY)
        merged.update({k: float(v) for k, v in self.energy.items()})
        object.__setattr__(self, "energy", merged)

    @property
    def points_per_batch(self) -> int:
        return self.addr_lanes // 8

    def cache_sizes(self, levels: int) -> tuple[int, ...]:
        if self.cache_per_level is None:
            return (self.cache_entries,) * levels
        if len(self.cache_per_level) != levels:
            raise ArchConfigError(f"cache_per_level has {len(self.cache_per_level)} entries, "
                                  f"grid has {levels} levels")
        return self.cache_per_level

    def replace(self, **kw) -> "ArchConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["cache_per_level"] is not None:
            d["cache_per_level"] = list(d["cache_per_level"])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ArchConfigError(f"unknown arch config keys: {sorted(unknown)}")
        d = dict(d)
        if d.get("cache_per_level") is not None:
            d["cache_per_level"] = tuple(d["cache_per_level"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ArchConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def server() -> ArchConfig:
    return ArchConfig()


def edge() -> ArchConfig:
    return ArchConfig(addr_lanes=16, cache_entries=2, fusion_units=8, density_subengines=1,
                      color_subengines=1, rgb_units=2, approx_units=4, adaptive_units=2,
                      addr_buffer=8, embed_buffer=16)


PRESETS = {"server": server, "edge": edge}
