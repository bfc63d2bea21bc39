"""Per-point access trace emitted by the renderer and replayed by the simulator.

One record per encoded point, in canonical order: Phase I probe rays first,
then Phase II rays, each pixel-major and point-major. A record carries the
ray id, the point index along the ray, flag bits and the base voxel of the
point on every level. The eight accessed vertices at a level are the base
plus {0,1}^3, so they need not be stored.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FLAG_ANCHOR = 1  # color network evaluated at this point
FLAG_PROBE = 2  # point belongs to a Phase I probe ray

TRACE_MAGIC = b"ASDRTRCE"
TRACE_VERSION = 1
_HEADER = struct.Struct("<8sIIIIQ")  # magic, version, width, height, levels, records


def record_dtype(levels: int) -> np.dtype:
    return np.dtype([("ray", "<u4"), ("point", "<u2"), ("flags", "u1"), ("pad", "u1"),
                     ("base", "<u2", (levels, 3))])


@dataclass
class AccessTrace:
    width: int
    height: int
    resolutions: tuple[int, ...]
    ray: np.ndarray  # (P,) int64
    point: np.ndarray  # (P,) int64
    flags: np.ndarray  # (P,) uint8
    base: np.ndarray  # (P, L, 3) uint16

    def __post_init__(self):
        P = self.ray.shape[0]
        if not (self.point.shape == (P,) and self.flags.shape == (P,)
                and self.base.shape == (P, len(self.resolutions), 3)):
            raise ValueError("inconsistent trace arrays")

    def __len__(self):
        return int(self.ray.shape[0])

    @property
    def levels(self) -> int:
        return len(self.resolutions)

    @property
    def anchors(self) -> np.ndarray:
        return (self.flags & FLAG_ANCHOR) != 0

    @property
    def probes(self) -> np.ndarray:
        return (self.flags & FLAG_PROBE) != 0

    @classmethod
    def empty(cls, width: int, height: int, resolutions) -> "AccessTrace":
        L = len(resolutions)
        return cls(width, height, tuple(int(r) for r in resolutions), np.zeros(0, np.int64),
                   np.zeros(0, np.int64), np.zeros(0, np.uint8), np.zeros((0, L, 3), np.uint16))

    @classmethod
    def concat(cls, parts: list["AccessTrace"], width: int, height: int, resolutions) -> "AccessTrace":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty(width, height, resolutions)
        return cls(width, height, tuple(int(r) for r in resolutions),
                   np.concatenate([p.ray for p in parts]), np.concatenate([p.point for p in parts]),
                   np.concatenate([p.flags for p in parts]), np.concatenate([p.base for p in parts]))

    def reorder_by_ray(self) -> "AccessTrace":
        """Stable sort by ray id, keeping point order inside each ray."""
        order = np.argsort(self.ray, kind="stable")
        return AccessTrace(self.width, self.height, self.resolutions, self.ray[order],
                           self.point[order], self.flags[order], self.base[order])

    def points_per_ray(self) -> np.ndarray:
        return np.bincount(self.ray, minlength=self.width * self.height)

    def save(self, path) -> None:
        L = self.levels
        rec = np.zeros(len(self), dtype=record_dtype(L))
        rec["ray"], rec["point"], rec["flags"], rec["base"] = self.ray, self.point, self.flags, self.base
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(_HEADER.pack(TRACE_MAGIC, TRACE_VERSION, self.width, self.height, L, len(self)))
            fh.write(struct.pack(f"<{L}I", *self.resolutions))
            fh.write(rec.tobytes())
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "AccessTrace":
        data = Path(path).read_bytes()
        if len(data) < _HEADER.size:
            raise ValueError("truncated trace file")
        magic, version, width, height, L, count = _HEADER.unpack_from(data)
        if magic != TRACE_MAGIC:
            raise ValueError(f"bad trace magic {magic!r}")
        if version != TRACE_VERSION:
            raise ValueError(f"unsupported trace version {version}")
        res = struct.unpack_from(f"<{L}I", data, _HEADER.size)
        off = _HEADER.size + 4 * L
        dt = record_dtype(L)
        if len(data) - off != count * dt.itemsize:
            raise ValueError("trace size does not match its header")
        rec = np.frombuffer(data, dtype=dt, count=count, offset=off)
        return cls(width, height, tuple(res), rec["ray"].astype(np.int64),
                   rec["point"].astype(np.int64), rec["flags"].copy(), rec["base"].copy())
