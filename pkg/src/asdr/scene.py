"""Procedural scenes standing in for trained radiance fields.

Two variants share one interface:

* :class:`AnalyticScene` evaluates closed-form density and color fields.
* :class:`GridScene` encodes points with the hash grid and runs the density
  and color networks, either with seeded random weights or with the
  passthrough preset over tables baked from an analytic field.

``density(points, dirs)`` returns ``(sigma, aux)`` for every point and
``color(points, dirs, aux)`` is only called on anchor points, with ``aux``
restricted to those points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mlp
from .grid import (ConfigError, EmbeddingTable, GridConfig, bake_from_field, encode,
                   make_tables)

SCENE_KINDS = ("spheres", "boxes", "empty")

# camera looking at the cube centre; scene objects are placed in its frame
LOOK_AT = np.array([0.5, 0.5, 0.5])
VIEW_DIR = np.array([0.45, 0.35, 1.0])
VIEW_DISTANCE = 1.2
VIEW_HALF_WIDTH = 0.1  # half extent of the view window at the look-at plane
SLAB = 0.24  # near..far depth range centred on the look-at point


def view_basis(forward=VIEW_DIR, up_hint=(0.0, 1.0, 0.0)):
    f = np.asarray(forward, dtype=np.float64)
    f = f / np.linalg.norm(f)
    r = np.cross(f, np.asarray(up_hint, dtype=np.float64))
    r = r / np.linalg.norm(r)
    u = np.cross(r, f)
    return r, u, f


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    base_color: np.ndarray


@dataclass
class Box:
    center: np.ndarray
    half: np.ndarray
    base_color: np.ndarray


@dataclass
class AnalyticScene:
    kind: str
    seed: int
    shapes: list = field(default_factory=list)
    sigma_max: float = 400.0
    shell: float = 0.006  # density ramps from 0 to sigma_max over this depth
    pattern_freq: float = 40.0
    pattern_amp: float = 0.2

    grid_config: GridConfig = field(default_factory=GridConfig)

    def _inside(self, p):
        """Signed depth inside each shape, shape (len(shapes), P)."""
        out = []
        for s in self.shapes:
            if isinstance(s, Sphere):
                out.append(s.radius - np.linalg.norm(p - s.center, axis=-1))
            else:
                q = np.abs(p - s.center) - s.half
                outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
                inside = np.minimum(q.max(axis=-1), 0.0)
                out.append(-(outside + inside))
        return np.stack(out) if out else np.zeros((0,) + p.shape[:-1])

    def field_density(self, p):
        p = np.asarray(p, dtype=np.float64)
        depth = self._inside(p)
        if depth.shape[0] == 0:
            return np.zeros(p.shape[:-1])
        return self.sigma_max * _smoothstep(depth / self.shell).max(axis=0)

    def field_color(self, p):
        p = np.asarray(p, dtype=np.float64)
        rgb = np.zeros(p.shape[:-1] + (3,))
        if not self.shapes:
            return rgb
        owner = self._inside(p).argmax(axis=0)
        k = self.pattern_freq
        wave = np.stack([np.sin(k * p[..., 0] + 1.3 * k * p[..., 1]),
                         np.sin(k * p[..., 1] - 0.7 * k * p[..., 2] + 1.0),
                         np.sin(k * p[..., 2] + 0.9 * k * p[..., 0] + 2.0)], axis=-1)
        base = np.stack([s.base_color for s in self.shapes])[owner]
        return np.clip(base + self.pattern_amp * wave, 0.0, 1.0)

    def field(self, p):
        return self.field_density(p), self.field_color(p)

    def density(self, points, dirs=None):
        return self.field_density(points), None

    def color(self, points, dirs=None, aux=None):
        return self.field_color(points)


@dataclass
class GridScene:
    grid_config: GridConfig
    tables: list[EmbeddingTable]
    density_net: mlp.MLPParams
    color_net: mlp.MLPParams
    mode: str  # "seeded" or "passthrough"
    kind: str = "grid"
    seed: int = 0

    def __post_init__(self):
        if self.density_net.input_dim != self.grid_config.encoding_dim:
            raise ConfigError("density net input does not match the grid encoding width")
        if self.color_net.input_dim != mlp.GEO_FEAT_DIM + mlp.DIR_ENC_DIM:
            raise ConfigError("color net input must be geo features plus direction encoding")

    def density(self, points, dirs=None):
        pts = np.asarray(points, dtype=np.float64)
        feat = encode(pts.reshape(-1, 3), self.tables, self.grid_config)
        out = mlp.density_head(self.density_net, feat)
        shape = pts.shape[:-1]
        return out.sigma.reshape(shape), out.geo_feat.reshape(shape + (mlp.GEO_FEAT_DIM,))

    def color(self, points, dirs, aux):
        enc = mlp.sh_encode(np.broadcast_to(dirs, np.shape(points)))
        return mlp.color_head(self.color_net, aux, enc)


def _spheres(seed: int) -> list:
    rng = np.random.default_rng(seed)
    r, u, f = view_basis()
    # (right, up, depth) offsets in the camera frame, radius, base color
    layout = [((-0.045, 0.030, 0.02), 0.040, (0.80, 0.25, 0.20)),
              ((0.042, 0.035, -0.03), 0.035, (0.25, 0.75, 0.30)),
              ((0.000, -0.045, 0.00), 0.045, (0.25, 0.35, 0.80))]
    shapes = []
    for (a, b, c), rad, col in layout:
        a, b, c = np.array([a, b, c]) + rng.uniform(-0.004, 0.004, 3)
        center = LOOK_AT + a * r + b * u + c * f
        color = np.clip(np.array(col) + rng.uniform(-0.05, 0.05, 3), 0.0, 1.0)
        shapes.append(Sphere(center, rad, color))
    return shapes


def _boxes(seed: int) -> list:
    rng = np.random.default_rng(seed)
    r, u, f = view_basis()
    layout = [((-0.045, 0.035, 0.0), 0.028, (0.85, 0.6, 0.2)),
              ((0.045, -0.035, 0.0), 0.032, (0.2, 0.6, 0.85))]
    shapes = []
    for (a, b, c), h, col in layout:
        a, b, c = np.array([a, b, c]) + rng.uniform(-0.004, 0.004, 3)
        shapes.append(Box(LOOK_AT + a * r + b * u + c * f, np.full(3, h),
                          np.clip(np.array(col) + rng.uniform(-0.05, 0.05, 3), 0.0, 1.0)))
    return shapes


def make_scene(kind: str = "spheres", seed: int = 0, grid_config: GridConfig | None = None) -> AnalyticScene:
    if kind not in SCENE_KINDS:
        raise ConfigError(f"unknown scene kind {kind!r}; choose from {SCENE_KINDS}")
    gc = grid_config or GridConfig()
    shapes = {"spheres": _spheres, "boxes": _boxes, "empty": lambda s: []}[kind](seed)
    return AnalyticScene(kind, seed, shapes, grid_config=gc)


def make_grid_scene(kind: str = "spheres", seed: int = 0, *, grid_config: GridConfig | None = None,
                    mode: str = "passthrough", preset: str = mlp.DEFAULT_PRESET) -> GridScene:
    """Grid-backed scene: baked analytic field (passthrough) or random weights (seeded)."""
    gc = grid_config or GridConfig(seed=seed)
    if mode == "passthrough":
        source = make_scene(kind, seed, gc)
        tables = make_tables(gc, zero=True)
        bake_from_field(source.field, tables, gc, activation_inverse=True)
        dens, col = mlp.passthrough_networks(gc, preset)
    elif mode == "seeded":
        tables = make_tables(gc, scale=1.0)
        dens, col = mlp.seeded_networks(gc, seed, preset)
    else:
        raise ConfigError(f"unknown grid scene mode {mode!r}")
    return GridScene(gc, tables, dens, col, mode, kind, seed)

