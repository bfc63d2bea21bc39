"""Ray generation, marching, and the baseline and two-phase adaptive renderers."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .grid import ConfigError, build_levels, voxel_coords
from .scene import LOOK_AT, SLAB, VIEW_DISTANCE, VIEW_HALF_WIDTH, view_basis
from .trace import FLAG_ANCHOR, FLAG_PROBE, AccessTrace
from .volume import (DEFAULT_DELTA, PixelPlan, candidate_counts, choose_counts_batch,
                     composite_batch, interpolate_batch, plan_from_probe, probe_shape,
                     subsample_deltas, subsample_indices)

# rays per vectorised batch; fixed so that every render path groups work identically
RAY_CHUNK = 1024


@dataclass(frozen=True)
class Camera:
    position: np.ndarray
    right: np.ndarray
    up: np.ndarray
    forward: np.ndarray
    fov_y: float  # vertical field of view, radians
    width: int
    height: int
    near: float
    far: float

    def __post_init__(self):
        if not 0 < self.near < self.far:
            raise ConfigError("camera needs 0 < near < far")
        if self.width < 1 or self.height < 1:
            raise ConfigError("image must be at least 1x1")
        if not 0 < self.fov_y < math.pi:
            raise ConfigError("fov_y must be in (0, pi)")
        basis = np.stack([self.right, self.up, self.forward])
        if np.max(np.abs(basis @ basis.T - np.eye(3))) > 1e-9:
            raise ConfigError("camera basis must be orthonormal")

    @property
    def pixels(self) -> int:
        return self.width * self.height


def default_camera(width: int = 128, height: int = 128) -> Camera:
    """Camera framing the procedural scenes: a narrow view of the cube centre."""
    r, u, f = view_basis()
    fov = 2.0 * math.atan(VIEW_HALF_WIDTH / VIEW_DISTANCE)
    return Camera(LOOK_AT - VIEW_DISTANCE * f, r, u, f, fov, width, height,
                  VIEW_DISTANCE - SLAB / 2, VIEW_DISTANCE + SLAB / 2)


def generate_rays(camera: Camera):
    """Origins and unit directions ``(H*W, 3)`` through pixel centres, row-major."""
    tan = math.tan(camera.fov_y / 2)
    aspect = camera.width / camera.height
    j, i = np.meshgrid(np.arange(camera.height), np.arange(camera.width), indexing="ij")
    x = ((i + 0.5) / camera.width * 2.0 - 1.0) * tan * aspect
    y = (1.0 - (j + 0.5) / camera.height * 2.0) * tan
    d = camera.forward + x[..., None] * camera.right + y[..., None] * camera.up
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    d = d.reshape(-1, 3)
    return np.broadcast_to(camera.position, d.shape).copy(), d


def sample_along_ray(count: int, near: float, far: float):
    """Midpoint-stratified parameters ``t`` and constant spacing ``delta``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    step = (far - near) / count
    t = near + (np.arange(count) + 0.5) * step
    return t, np.full(count, step)


def sample_points(origins, dirs, t):
    """Sample positions ``(R, N, 3)`` clipped to the unit-cube scene bounds."""
    p = origins[:, None, :] + dirs[:, None, :] * np.asarray(t)[None, :, None]
    return np.clip(p, 0.0, 1.0)


@dataclass
class RenderReport:
    image: np.ndarray  # (H, W, 3)
    sample_counts: np.ndarray  # (H, W) samples marched per pixel
    points: int  # points encoded (after early termination)
    density_calls: int
    color_calls: int
    trace: AccessTrace | None
    wall_time: float
    plan: PixelPlan | None = None
    probe_pixels: np.ndarray | None = None  # ray ids rendered in Phase I
    candidates: tuple[int, ...] = ()
    extra: dict = field(default_factory=dict)


@dataclass
class _RayBatch:
    rgb: np.ndarray
    density_calls: np.ndarray
    color_calls: np.ndarray
    sigma: np.ndarray | None = None
    colors: np.ndarray | None = None


def _render_rays(scene, origins, dirs, ray_ids, count, near, far, n, eps, *, flags=0,
                 keep=False, levels=None, trace_parts=None) -> _RayBatch:
    """March ``count`` samples on each ray, evaluate, approximate and composite."""
    if n < 1:
        raise ConfigError("group size n must be >= 1")
    t, delta = sample_along_ray(count, near, far)
    pts = sample_points(origins, dirs, t)
    R = pts.shape[0]
    sigma, aux = scene.density(pts, dirs[:, None, :])
    anchors = np.arange(0, count, n)
    colors = np.zeros((R, count, 3))
    aux_a = None if aux is None else aux[:, anchors]
    colors[:, anchors] = scene.color(pts[:, anchors], dirs[:, None, :], aux_a)
    colors = interpolate_batch(colors, t, n)
    rgb, _, last = composite_batch(sigma, np.broadcast_to(delta, sigma.shape), colors, eps)
    # points after the termination index are still processed up to the next
    # anchor, whose color the preceding points interpolate towards
    nxt = (last // n + 1) * n
    end = np.where((last % n == 0) | (nxt >= count), last, nxt)
    if trace_parts is not None:
        mask = np.arange(count)[None, :] <= end[:, None]
        rr, pp = np.nonzero(mask)
        base = np.stack([voxel_coords(pts[rr, pp], lv.resolution)[0] for lv in levels], axis=1)
        fl = np.where(pp % n == 0, FLAG_ANCHOR, 0).astype(np.uint8) | np.uint8(flags)
        trace_parts.append(AccessTrace(0, 0, tuple(lv.resolution for lv in levels),
                                       ray_ids[rr].astype(np.int64), pp.astype(np.int64), fl,
                                       base.astype(np.uint16)))
    return _RayBatch(np.clip(rgb, 0.0, 1.0), end + 1, end // n + 1,
                     sigma if keep else None, colors if keep else None)


def render_pixel(origin, direction, count: int, scene, *, near: float, far: float, n: int = 1,
                 eps: float = 0.0, ray_id: int = 0, trace_sink: list | None = None):
    """Render one ray; returns ``(rgb, stats)``.

    ``stats`` holds the density and color invocation counts. When
    ``trace_sink`` is a list, the ray's access records are appended to it as
    an :class:`AccessTrace` fragment.
    """
    levels = _levels(scene) if trace_sink is not None else None
    b = _render_rays(scene, np.asarray(origin, float)[None], np.asarray(direction, float)[None],
                     np.array([ray_id]), count, near, far, n, eps, levels=levels,
                     trace_parts=trace_sink)
    return b.rgb[0], {"density_calls": int(b.density_calls[0]), "color_calls": int(b.color_calls[0])}


def _march(scene, camera, ray_ids, count, n, eps, **kw):
    """Render the given rays in fixed-size chunks and concatenate the results."""
    origins, dirs = generate_rays(camera)
    out = []
    for s in range(0, len(ray_ids), RAY_CHUNK):
        ids = ray_ids[s:s + RAY_CHUNK]
        out.append(_render_rays(scene, origins[ids], dirs[ids], ids, count, camera.near,
                                camera.far, n, eps, **kw))
    return out


def _levels(scene):
    return build_levels(scene.grid_config)


def _finish_trace(parts, camera, levels, reorder=False):
    tr = AccessTrace.concat(parts, camera.width, camera.height, [lv.resolution for lv in levels])
    tr.width, tr.height = camera.width, camera.height
    return tr.reorder_by_ray() if reorder else tr


def render_fixed(scene, camera: Camera, ns: int, n: int = 1, eps: float = 0.0, *,
                 trace: bool = True) -> RenderReport:
    """Every pixel marched with ``ns`` samples, color group size ``n``."""
    if ns < 1:
        raise ConfigError("ns must be >= 1")
    start = time.perf_counter()
    levels = _levels(scene)
    parts = [] if trace else None
    ids = np.arange(camera.pixels)
    batches = _march(scene, camera, ids, ns, n, eps, levels=levels, trace_parts=parts)
    rgb = np.concatenate([b.rgb for b in batches])
    dens = np.concatenate([b.density_calls for b in batches])
    col = np.concatenate([b.color_calls for b in batches])
    tr = _finish_trace(parts, camera, levels) if trace else None
    return RenderReport(rgb.reshape(camera.height, camera.width, 3),
                        np.full((camera.height, camera.width), ns, dtype=np.int64),
                        int(dens.sum()), int(dens.sum()), int(col.sum()), tr,
                        time.perf_counter() - start)


def render_baseline(scene, camera: Camera, ns: int = 64, *, trace: bool = True) -> RenderReport:
    """Fixed sampling, no approximation, no early termination."""
    return render_fixed(scene, camera, ns, 1, 0.0, trace=trace)


def probe_ray_ids(width: int, height: int, d: int) -> np.ndarray:
    hp, wp = probe_shape(width, height, d)
    rows = np.arange(hp) * d
    cols = np.arange(wp) * d
    return (rows[:, None] * width + cols[None, :]).reshape(-1)


def render_asdr(scene, camera: Camera, ns: int = 64, d: int = 5, delta: float = DEFAULT_DELTA,
                candidates=None, n: int = 2, eps: float = 1e-4, *, trace: bool = True) -> RenderReport:
    """Two-phase adaptive render.

    Phase I renders every d-th pixel of every d-th row at ``ns`` samples and
    scores reduced counts by striding over the evaluated samples. Phase II
    renders the remaining pixels with the interpolated per-pixel counts, color
    approximation and early termination. Probe pixels keep their Phase I color.
    """
    if d < 1 or ns < 1:
        raise ConfigError("need d >= 1 and ns >= 1")
    if eps < 0 or eps >= 1:
        raise ConfigError("eps must be in [0, 1)")
    start = time.perf_counter()
    cand = tuple(sorted(candidates)) if candidates is not None else candidate_counts(ns)
    if any(c < 1 or c > ns for c in cand):
        raise ConfigError("candidate counts must lie in [1, ns]")
    levels = _levels(scene)
    W, H = camera.width, camera.height
    image = np.zeros((camera.pixels, 3))
    counts = np.zeros(camera.pixels, dtype=np.int64)

    # Phase I
    parts1 = [] if trace else None
    probes = probe_ray_ids(W, H, d)
    batches = _march(scene, camera, probes, ns, n, 0.0, flags=FLAG_PROBE, keep=True,
                     levels=levels, trace_parts=parts1)
    t, step = sample_along_ray(ns, camera.near, camera.far)
    rds = []
    for b in batches:
        r = np.zeros((b.rgb.shape[0], len(cand)))
        for j, k in enumerate(cand):
            idx = subsample_indices(ns, k)
            dk = subsample_deltas(t, step, idx)
            ck, _, _ = composite_batch(b.sigma[:, idx], np.broadcast_to(dk, (b.sigma.shape[0], idx.size)),
                                       b.colors[:, idx], 0.0)
            r[:, j] = np.max(np.abs(np.clip(ck, 0.0, 1.0) - b.rgb), axis=1)
        rds.append(r)
    rds = np.concatenate(rds)
    chosen = choose_counts_batch(rds, cand, ns, delta)
    image[probes] = np.concatenate([b.rgb for b in batches])
    counts[probes] = ns
    dens = sum(int(b.density_calls.sum()) for b in batches)
    col = sum(int(b.color_calls.sum()) for b in batches)

    hp, wp = probe_shape(W, H, d)
    plan = plan_from_probe(chosen.reshape(hp, wp), d, W, H, lo=min(cand + (ns,)), hi=ns, ns=ns,
                           delta=delta)

    # Phase II, grouped by planned count
    parts2 = [] if trace else None
    rest = np.ones(camera.pixels, dtype=bool)
    rest[probes] = False
    flat = plan.counts.reshape(-1)
    for c in np.unique(flat[rest]):
        ids = np.nonzero(rest & (flat == c))[0]
        for b, s in zip(_march(scene, camera, ids, int(c), n, eps, levels=levels, trace_parts=parts2),
                        range(0, len(ids), RAY_CHUNK)):
            sel = ids[s:s + RAY_CHUNK]
            image[sel] = b.rgb
            dens += int(b.density_calls.sum())
            col += int(b.color_calls.sum())
        counts[ids] = c

    tr = None
    if trace:
        tr = AccessTrace.concat([_finish_trace(parts1, camera, levels),
                                 _finish_trace(parts2, camera, levels, reorder=True)],
                                W, H, [lv.resolution for lv in levels])
    return RenderReport(image.reshape(H, W, 3), counts.reshape(H, W), dens, dens, col, tr,
                        time.perf_counter() - start, plan, probes, cand,
                        {"probe_rd": rds, "probe_chosen": chosen})
