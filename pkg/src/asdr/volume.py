"""Front-to-back compositing, rendering difficulty and color approximation.

Single-ray functions take a :class:`RaySamples` (struct of arrays). The
``*_batch`` variants operate on ``(rays, points)`` arrays that share one
sample count and are what the renderer uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_DELTA = 1.0 / 2048.0
MIN_CANDIDATE = 4


@dataclass(frozen=True)
class PointSample:
    t: float
    delta: float
    sigma: float
    color: tuple[float, float, float]
    color_source: str = "computed"  # or "interpolated"


@dataclass
class RaySamples:
    t: np.ndarray  # (N,)
    delta: np.ndarray  # (N,)
    sigma: np.ndarray  # (N,)
    color: np.ndarray  # (N, 3)
    interpolated: np.ndarray = field(default=None)  # (N,) bool

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        n = self.t.shape[0]
        self.delta = np.asarray(self.delta, dtype=np.float64).reshape(n)
        self.sigma = np.asarray(self.sigma, dtype=np.float64).reshape(n)
        self.color = np.asarray(self.color, dtype=np.float64).reshape(n, 3)
        if self.interpolated is None:
            self.interpolated = np.zeros(n, dtype=bool)
        if np.any(self.delta <= 0) or np.any(self.sigma < 0):
            raise ValueError("samples need delta > 0 and sigma >= 0")

    def __len__(self):
        return self.t.shape[0]

    @classmethod
    def from_points(cls, points: Sequence[PointSample]) -> "RaySamples":
        if not points:
            return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros((0, 3)))
        return cls([p.t for p in points], [p.delta for p in points], [p.sigma for p in points],
                   [p.color for p in points],
                   np.array([p.color_source == "interpolated" for p in points]))

    def to_points(self) -> list[PointSample]:
        return [PointSample(float(self.t[i]), float(self.delta[i]), float(self.sigma[i]),
                            tuple(float(c) for c in self.color[i]),
                            "interpolated" if self.interpolated[i] else "computed")
                for i in range(len(self))]


@dataclass(frozen=True)
class RayComposite:
    color: np.ndarray  # (3,)
    weights: np.ndarray  # T_i * alpha_i for the composited samples
    transmittance: np.ndarray  # T_i before each composited sample
    residual: float  # transmittance left after the last composited sample
    terminated_at: int | None = None


def _as_samples(samples) -> RaySamples:
    if isinstance(samples, RaySamples):
        return samples
    return RaySamples.from_points(list(samples))


def alpha(sigma, delta):
    """Opacity 1 - exp(-sigma * delta)."""
    return -np.expm1(-np.asarray(sigma, dtype=np.float64) * np.asarray(delta, dtype=np.float64))


def composite_batch(sigma, delta, color, eps: float = 0.0):
    """Composite ``(R, N)`` rays.

    Returns ``(rgb (R,3), residual (R,), last (R,))`` where ``last`` is the
    index of the final composited sample. With ``eps > 0`` a ray stops after
    the first sample whose following transmittance drops below ``eps``.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    R, N = sigma.shape
    if N == 0:
        return np.zeros((R, 3)), np.ones(R), np.full(R, -1, dtype=np.int64)
    a = alpha(sigma, delta)
    after = np.cumprod(1.0 - a, axis=1)  # T_{i+1}
    before = np.empty_like(after)
    before[:, 0] = 1.0
    before[:, 1:] = after[:, :-1]
    w = before * a
    if eps > 0:
        below = after < eps
        last = np.where(below.any(axis=1), below.argmax(axis=1), N - 1)
        w = np.where(np.arange(N)[None, :] <= last[:, None], w, 0.0)
        residual = after[np.arange(R), last]
    else:
        last = np.full(R, N - 1, dtype=np.int64)
        residual = after[:, -1]
    rgb = np.einsum("rn,rnc->rc", w, np.asarray(color, dtype=np.float64))
    return rgb, residual, last


def composite(samples) -> RayComposite:
    s = _as_samples(samples)
    n = len(s)
    if n == 0:
        return RayComposite(np.zeros(3), np.zeros(0), np.zeros(0), 1.0, None)
    a = alpha(s.sigma, s.delta)
    after = np.cumprod(1.0 - a)
    before = np.concatenate([[1.0], after[:-1]])
    w = before * a
    return RayComposite(w @ s.color, w, before, float(after[-1]), None)


def composite_early(samples, epsilon_T: float) -> RayComposite:
    if not 0.0 < epsilon_T < 1.0:
        raise ValueError("epsilon_T must be in (0, 1)")
    s = _as_samples(samples)
    n = len(s)
    if n == 0:
        return RayComposite(np.zeros(3), np.zeros(0), np.zeros(0), 1.0, None)
    a = alpha(s.sigma, s.delta)
    after = np.cumprod(1.0 - a)
    below = np.nonzero(after < epsilon_T)[0]
    k = int(below[0]) if below.size else n - 1
    before = np.concatenate([[1.0], after[:-1]])[:k + 1]
    w = before * a[:k + 1]
    return RayComposite(w @ s.color[:k + 1], w, before, float(after[k]),
                        k if below.size else None)


def subsample_indices(n: int, k: int) -> np.ndarray:
    """round(j*n/k) for j < k, halves rounded up, computed exactly in integers."""
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= {n}, got {k}")
    j = np.arange(k, dtype=np.int64)
    return np.unique((2 * j * n + k) // (2 * k))


def subsample_deltas(t, delta, idx):
    """Gaps between kept samples; the last gap runs to the original ray end.

    Works on ``(N,)`` or ``(R, N)`` arrays.
    """
    t = np.asarray(t, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    kept = t[..., idx]
    end = t[..., -1:] + delta[..., -1:]
    return np.diff(np.concatenate([kept, end], axis=-1), axis=-1)


def subsample(samples, k: int) -> RaySamples:
    s = _as_samples(samples)
    n = len(s)
    idx = subsample_indices(n, k)
    if k == n:
        return RaySamples(s.t.copy(), s.delta.copy(), s.sigma.copy(), s.color.copy(),
                          s.interpolated.copy())
    return RaySamples(s.t[idx], subsample_deltas(s.t, s.delta, idx), s.sigma[idx], s.color[idx],
                      s.interpolated[idx])


def difficulty(full, candidate) -> float:
    """Largest per-channel absolute color difference."""
    a = full.color if isinstance(full, RayComposite) else np.asarray(full, dtype=np.float64)
    b = candidate.color if isinstance(candidate, RayComposite) else np.asarray(candidate, dtype=np.float64)
    return float(np.max(np.abs(a - b)))


@dataclass(frozen=True)
class DifficultyReport:
    candidates: tuple[int, ...]
    colors: np.ndarray  # (p, 3)
    rd: np.ndarray  # (p,)
    chosen: int


def candidate_counts(ns: int, divisors: Sequence[int] = (16, 8, 4, 2)) -> tuple[int, ...]:
    """Default reduced counts ns/16 .. ns/2, floored, at least 4 (never above ns)."""
    return tuple(sorted({min(ns, max(MIN_CANDIDATE, ns // d)) for d in divisors}))


def choose_count(rds, candidates: Sequence[int], ns: int, delta: float) -> int:
    for rd, c in sorted(zip(rds, candidates), key=lambda x: x[1]):
        if rd <= delta:
            return int(c)
    return int(ns)


def choose_counts_batch(rds, candidates: Sequence[int], ns: int, delta: float) -> np.ndarray:
    """Vectorised choose_count over rays; ``rds`` has shape (R, p)."""
    rds = np.asarray(rds, dtype=np.float64)
    order = np.argsort(candidates, kind="stable")
    cand = np.asarray(candidates, dtype=np.int64)[order]
    ok = rds[:, order] <= delta
    return np.where(ok.any(axis=1), cand[ok.argmax(axis=1)], ns)


@dataclass(frozen=True)
class PixelPlan:
    width: int
    height: int
    stride: int
    counts: np.ndarray  # (H, W) int
    ns: int
    delta: float
    probe_counts: np.ndarray = field(default=None, repr=False)

    @property
    def mean_count(self) -> float:
        return float(self.counts.mean())


def probe_shape(width: int, height: int, d: int) -> tuple[int, int]:
    """Probe rows/cols: pixels at multiples of d along each axis."""
    return -(-height // d), -(-width // d)


def plan_from_probe(probe_counts, d: int, width: int, height: int | None = None, *,
                    lo: int | None = None, hi: int | None = None, ns: int | None = None,
                    delta: float = DEFAULT_DELTA) -> PixelPlan:
    """Bilinearly interpolate probe counts to every pixel, rounding up.

    Probes sit at pixel coordinates that are multiples of ``d``. Pixels past
    the last probe row/column use the nearest probes. Arithmetic is exact:
    the weighted sum has denominator d^2.
    """
    if height is None:
        height = width
    probe = np.asarray(probe_counts, dtype=np.int64)
    if probe.shape != probe_shape(width, height, d):
        raise ValueError(f"probe grid {probe.shape} does not match image {height}x{width}, d={d}")
    hp, wp = probe.shape
    ys, xs = np.arange(height), np.arange(width)
    y0, x0 = ys // d, xs // d
    fy, fx = ys - y0 * d, xs - x0 * d
    y1, x1 = np.minimum(y0 + 1, hp - 1), np.minimum(x0 + 1, wp - 1)
    # beyond the last probe both neighbours are the same probe, so the
    # interpolation collapses to that probe's value
    num = ((d - fy)[:, None] * (d - fx)[None, :] * probe[y0[:, None], x0[None, :]]
           + (d - fy)[:, None] * fx[None, :] * probe[y0[:, None], x1[None, :]]
           + fy[:, None] * (d - fx)[None, :] * probe[y1[:, None], x0[None, :]]
           + fy[:, None] * fx[None, :] * probe[y1[:, None], x1[None, :]])
    counts = -(-num // (d * d))
    if ns is None:
        ns = int(probe.max()) if probe.size else 0
    lo = int(probe.min()) if lo is None else lo
    hi = ns if hi is None else hi
    counts = np.clip(counts, lo, hi)
    return PixelPlan(width, height, d, counts, ns, delta, probe)


def group_anchors(count: int, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("group size n must be >= 1")
    return np.arange(0, count, n, dtype=np.int64)


def interpolate_batch(colors, t, n: int) -> np.ndarray:
    """Fill non-anchor colors of ``(R, N, 3)`` arrays by linear interpolation in t.

    Only anchor entries (multiples of n) of ``colors`` are read. ``t`` is
    ``(N,)`` or ``(R, N)``.
    """
    colors = np.asarray(colors, dtype=np.float64)
    N = colors.shape[-2]
    if n == 1 or N == 0:
        return colors.copy()
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), colors.shape[:-1])
    i = np.arange(N)
    a = (i // n) * n
    b = a + n
    has_b = b < N
    b = np.where(has_b, b, a)
    ca, cb = colors[..., a, :], colors[..., b, :]
    ta, tb, ti = t[..., a], t[..., b], t[..., i]
    span = np.where(has_b, tb - ta, 1.0)
    w = np.where(has_b, (ti - ta) / span, 0.0)
    out = ca + w[..., None] * (cb - ca)
    out[..., a == i, :] = colors[..., a == i, :]
    return out


def interpolate_colors(samples, anchors, t=None) -> RaySamples:
    """Linear interpolation between arbitrary sorted anchors; clamp past the last."""
    s = _as_samples(samples)
    n = len(s)
    anchors = np.asarray(anchors, dtype=np.int64)
    t = s.t if t is None else np.asarray(t, dtype=np.float64)
    out = s.color.copy()
    interp = s.interpolated.copy()
    if anchors.size == 0:
        raise ValueError("need at least one anchor")
    for i in range(n):
        pos = np.searchsorted(anchors, i, side="right") - 1
        if pos >= 0 and anchors[pos] == i:
            continue
        if pos < 0:
            out[i] = s.color[anchors[0]]
        elif pos + 1 < anchors.size:
            a, b = anchors[pos], anchors[pos + 1]
            w = (t[i] - t[a]) / (t[b] - t[a])
            out[i] = s.color[a] + w * (s.color[b] - s.color[a])
        else:
            out[i] = s.color[anchors[pos]]
        interp[i] = True
    return RaySamples(s.t, s.delta, s.sigma, out, interp)
