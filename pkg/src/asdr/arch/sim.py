"""Trace-driven, cycle-level model of the accelerator.

Batch formation
    Consecutive trace points are taken in groups of ``addr_lanes // 8``
    (one voxel of 8 vertices per point and level). A group never mixes
    Phase I and Phase II points. Each group issues one batch per level,
    coarse to fine, so a batch holds at most ``addr_lanes`` addresses of a
    single level. The lane of a point inside its group selects the replica
    on dense levels.

Memory path (per batch)
    Tags (logical table indices) go through that level's LRU register
    cache. Misses become crossbar reads; the batch occupies the crossbar
    stage for as many cycles as its busiest crossbar has reads (0 when all
    requests hit).

Timing
    Stages run in order and are modelled with max-plus recurrences: address
    generation (1 cycle per batch, bounded by the address buffer), crossbar
    service, fusion (``fusion_units / levels`` points per cycle, bounded by
    the embed buffer), the density subengines, the color subengines (anchor
    points only when approximation is honored) and the render units (one
    cycle per ray plus interpolation and probe scoring work). Phase II
    address generation waits for Phase I to drain and for the per-pixel
    plan to be computed.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from ..trace import FLAG_ANCHOR, FLAG_PROBE, AccessTrace
from .config import ArchConfig
from .layout import PhysicalLayout, plan_layout

FEATURES = ("hybrid_mapping", "cache", "approximation")


@dataclass(frozen=True)
class Features:
    hybrid_mapping: bool = True
    cache: bool = True
    approximation: bool = True

    @classmethod
    def parse(cls, spec) -> "Features":
        """From a list/str of names; ``all``, ``none`` and ``-name`` are accepted."""
        if isinstance(spec, Features):
            return spec
        if isinstance(spec, str):
            spec = [s for s in spec.replace(",", " ").split() if s]
        on = set()
        for s in spec:
            if s == "all":
                on |= set(FEATURES)
            elif s == "none":
                on.clear()
            elif s.startswith("-") and s[1:] in FEATURES:
                on.discard(s[1:])
            elif s in FEATURES:
                on.add(s)
            else:
                raise ValueError(f"unknown feature {s!r}; choose from {FEATURES}")
        return cls(**{f: f in on for f in FEATURES})

    def label(self) -> str:
        on = [f for f in FEATURES if getattr(self, f)]
        return "+".join(on) if on else "none"


@dataclass
class SimStats:
    label: str
    cycles: int
    encode_cycles: int  # sum over batches of max(1, crossbar cycles)
    batches: int
    points: int
    rays: int
    addresses: int
    lookups: int
    hits: int
    misses: int
    hits_per_level: list
    misses_per_level: list
    xbar_reads: int
    max_xbar_reads: int
    conflict_cycles: int  # crossbar cycles beyond one per batch
    density_invocations: int
    color_invocations: int
    interp_ops: int
    busy: dict
    stalls: dict
    energy_events: dict
    energy_costs: dict
    energy_total: float
    lower_bound: int
    features: dict = field(default_factory=dict)

    @property
    def hit_rate(self) -> float:
        return self.hits / self.lookups if self.lookups else 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    CSV_FIELDS = ("label", "cycles", "encode_cycles", "batches", "points", "rays", "addresses",
                  "lookups", "hits", "misses", "xbar_reads", "max_xbar_reads", "conflict_cycles",
                  "density_invocations", "color_invocations", "interp_ops", "energy_total",
                  "lower_bound")

    def csv_row(self) -> dict:
        return {k: getattr(self, k) for k in self.CSV_FIELDS}


def stats_to_csv(stats: list[SimStats]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SimStats.CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for s in stats:
        w.writerow(s.csv_row())
    return buf.getvalue()


@numba.njit(cache=True)
def _memory_kernel(base, gstart, dense, kbits, copies, lbase, tsize, primes, rows, cap,
                   coalesce, nx, maxn):
    P, L, _ = base.shape
    ng = gstart.shape[0] - 1
    B = ng * L
    arb = np.zeros(B, np.int64)
    capmax = 1
    for l in range(L):
        if cap[l] > capmax:
            capmax = cap[l]
    ctag = -np.ones((L, capmax), np.int64)
    cstamp = np.zeros((L, capmax), np.int64)
    clock = 0
    hits = np.zeros(L, np.int64)
    misses = np.zeros(L, np.int64)
    xreads = np.zeros(nx, np.int64)
    xcount = np.zeros(nx, np.int64)
    xgen = -np.ones(nx, np.int64)
    S = 16
    while S < 4 * maxn:
        S *= 2
    tkey = np.zeros(S, np.int64)
    tgen = -np.ones(S, np.int64)
    akey = np.zeros(S, np.int64)
    agen = -np.ones(S, np.int64)
    tags = np.zeros(maxn, np.int64)
    phys = np.zeros(maxn, np.int64)
    tmask = np.uint64(tsize - 1)
    b = 0
    for g in range(ng):
        p0 = gstart[g]
        p1 = gstart[g + 1]
        for l in range(L):
            n = 0
            k = kbits[l]
            m = k - 1
            for p in range(p0, p1):
                cp = (p - p0) % copies[l]
                for c in range(8):
                    x = np.int64(base[p, l, 0]) + (c & 1)
                    y = np.int64(base[p, l, 1]) + ((c >> 1) & 1)
                    z = np.int64(base[p, l, 2]) + ((c >> 2) & 1)
                    if dense[l]:
                        tag = x | (y << k) | (z << (2 * k))
                        lsb = ((x & 1) << 2) | ((y & 1) << 1) | (z & 1)
                        local = (np.int64(cp) << (3 * k)) | (lsb << (3 * m)) \
                            | ((x >> 1) << (2 * m)) | ((y >> 1) << m) | (z >> 1)
                    else:
                        h = (np.uint64(x) * primes[0]) ^ (np.uint64(y) * primes[1]) \
                            ^ (np.uint64(z) * primes[2])
                        tag = np.int64(h & tmask)
                        local = tag
                    tags[n] = tag
                    phys[n] = lbase[l] + local
                    n += 1
            worst = 0
            for i in range(n):
                if cap[l] > 0:
                    # repeat of a tag already looked up in this batch
                    hsh = (tags[i] * 2654435761) & (S - 1)
                    dup = False
                    while tgen[hsh] == b:
                        if tkey[hsh] == tags[i]:
                            dup = True
                            break
                        hsh = (hsh + 1) & (S - 1)
                    if dup:
                        hits[l] += 1
                        continue
                    tgen[hsh] = b
                    tkey[hsh] = tags[i]
                    clock += 1
                    found = -1
                    for e in range(cap[l]):
                        if ctag[l, e] == tags[i]:
                            found = e
                            break
                    if found >= 0:
                        cstamp[l, found] = clock
                        hits[l] += 1
                        continue
                    victim = -1
                    for e in range(cap[l]):
                        if ctag[l, e] == -1:
                            victim = e
                            break
                    if victim < 0:
                        victim = 0
                        for e in range(1, cap[l]):
                            if cstamp[l, e] < cstamp[l, victim]:
                                victim = e
                    ctag[l, victim] = tags[i]
                    cstamp[l, victim] = clock
                misses[l] += 1
                a = phys[i]
                if coalesce:
                    hsh = (a * 2654435761) & (S - 1)
                    dup = False
                    while agen[hsh] == b:
                        if akey[hsh] == a:
                            dup = True
                            break
                        hsh = (hsh + 1) & (S - 1)
                    if dup:
                        continue
                    agen[hsh] = b
                    akey[hsh] = a
                xb = a // rows
                if xgen[xb] != b:
                    xgen[xb] = b
                    xcount[xb] = 0
                xcount[xb] += 1
                xreads[xb] += 1
                if xcount[xb] > worst:
                    worst = xcount[xb]
            arb[b] = worst
            b += 1
    return arb, hits, misses, xreads


@numba.njit(cache=True)
def _timing_kernel(arb, gstart, L, color_pt, ray_end, ray_dur, n_probe_rays, phase2_group,
                   plan_cycles, addr_buf, embed_buf, fuse_m, fuse_q, fuse_lat, dsub, dlat,
                   csub, clat, runits):
    ng = gstart.shape[0] - 1
    P = gstart[ng]
    B = ng * L
    gs = np.zeros(B, np.int64)
    xs = np.zeros(B, np.int64)
    fs = np.zeros(P, np.int64)
    ds = np.zeros(P, np.int64)
    cring = np.zeros(max(csub, 1), np.int64)
    nc = 0
    nrays = ray_end.shape[0]
    re = np.zeros(nrays, np.int64)
    gen_stall = 0
    xbar_wait = 0
    last_xe = 0
    done_max = 0
    r = 0
    finish = 0
    phase1_end = 0
    for g in range(ng):
        p0 = gstart[g]
        p1 = gstart[g + 1]
        for l in range(L):
            b = g * L + l
            s = gs[b - 1] + 1 if b > 0 else 0
            nominal = s
            if b >= addr_buf:
                s = max(s, xs[b - addr_buf])
            if g == phase2_group and l == 0:
                s = max(s, phase1_end + plan_cycles)
            gen_stall += s - nominal
            gs[b] = s
            st = max(s + 1, last_xe)
            if p0 - embed_buf >= 0:
                w = fs[p0 - embed_buf]
                if w > st:
                    xbar_wait += w - st
                    st = w
            xs[b] = st
            last_xe = st + arb[b]
        ready = last_xe
        for p in range(p0, p1):
            f = ready
            if p >= fuse_m and fs[p - fuse_m] + fuse_q > f:
                f = fs[p - fuse_m] + fuse_q
            fs[p] = f
            d = f + fuse_lat
            if p >= dsub and ds[p - dsub] + 1 > d:
                d = ds[p - dsub] + 1
            ds[p] = d
            done = d + dlat
            if color_pt[p]:
                c = done
                if nc >= csub and cring[nc % csub] + 1 > c:
                    c = cring[nc % csub] + 1
                cring[nc % csub] = c
                nc += 1
                done = c + clat
            if done > done_max:
                done_max = done
            while r < nrays and ray_end[r] == p:
                st = done_max
                if r >= runits and re[r - runits] > st:
                    st = re[r - runits]
                re[r] = st + ray_dur[r]
                if re[r] > finish:
                    finish = re[r]
                if r == n_probe_rays - 1:
                    phase1_end = finish
                done_max = 0
                r += 1
    if last_xe > finish:
        finish = last_xe
    return finish, gen_stall, xbar_wait


def _groups(trace: AccessTrace, G: int) -> np.ndarray:
    """Start offsets of point groups: every G points, restarting at phase changes."""
    P = len(trace)
    if P == 0:
        return np.zeros(1, np.int64)
    probe = trace.probes
    cut = np.nonzero(probe[1:] != probe[:-1])[0] + 1
    bounds = np.concatenate([[0], cut, [P]])
    starts = [np.arange(a, b, G) for a, b in zip(bounds[:-1], bounds[1:])]
    return np.concatenate(starts + [np.array([P])]).astype(np.int64)


def _layout_arrays(layout: PhysicalLayout):
    lv = layout.levels
    return (np.array([l.dense for l in lv], np.bool_), np.array([l.axis_bits for l in lv], np.int64),
            np.array([l.copies for l in lv], np.int64), np.array([l.base for l in lv], np.int64),
            np.array(layout.primes, np.uint64))


def memory_pass(trace: AccessTrace, layout: PhysicalLayout, arch: ArchConfig, cache_sizes,
                gstart=None):
    """Per-batch crossbar cycles, per-level hits/misses and per-crossbar reads."""
    if gstart is None:
        gstart = _groups(trace, arch.points_per_batch)
    dense, kbits, copies, lbase, primes = _layout_arrays(layout)
    nx = arch.capacity // layout.xbar_rows + 1
    base = np.ascontiguousarray(trace.base)
    return _memory_kernel(base, gstart, dense, kbits, copies, lbase, layout.table_size, primes,
                          layout.xbar_rows, np.asarray(cache_sizes, np.int64),
                          arch.xbar_coalesce, nx, arch.addr_lanes)


def _check(trace: AccessTrace, layout: PhysicalLayout, report):
    if trace.levels != len(layout.levels):
        raise ValueError("trace and layout disagree on the number of levels")
    if tuple(l.resolution for l in layout.levels) != tuple(trace.resolutions):
        raise ValueError("trace resolutions do not match the grid configuration")
    if report is not None:
        if report.trace is not None and report.trace is not trace and len(report.trace) != len(trace):
            raise ValueError("trace does not belong to this render report")
        if report.points != len(trace):
            raise ValueError(f"report counts {report.points} points, trace has {len(trace)}")
        h, w = report.image.shape[:2]
        if (w, h) != (trace.width, trace.height):
            raise ValueError("trace and report image sizes differ")


def simulate(trace: AccessTrace, report, arch: ArchConfig, features=Features(), *,
             grid=None, layout: PhysicalLayout | None = None, label: str | None = None) -> SimStats:
    """Replay ``trace`` on the accelerator model.

    ``grid`` (a GridConfig) defaults to the scene's configuration taken from
    the trace resolutions with default table sizes; ``layout`` overrides the
    planned layout entirely.
    """
    from ..grid import GridConfig

    features = Features.parse(features)
    if layout is None:
        grid = grid or GridConfig()
        layout = plan_layout(grid, arch, hybrid=features.hybrid_mapping)
    _check(trace, layout, report)
    L = trace.levels
    P = len(trace)
    caches = arch.cache_sizes(L) if features.cache else (0,) * L
    gstart = _groups(trace, arch.points_per_batch)
    arb, hits, misses, xreads = memory_pass(trace, layout, arch, caches, gstart)

    anchors = trace.anchors if features.approximation else np.ones(P, dtype=bool)
    probe = trace.probes
    # ray segments: maximal runs of one ray id
    if P:
        cut = np.nonzero(trace.ray[1:] != trace.ray[:-1])[0] + 1
        rstart = np.concatenate([[0], cut]).astype(np.int64)
        rend = np.concatenate([cut - 1, [P - 1]]).astype(np.int64)
    else:
        rstart = rend = np.zeros(0, np.int64)
    interp = np.add.reduceat((~anchors).astype(np.int64), rstart) if P else np.zeros(0, np.int64)
    n_cand = len(report.candidates) if report is not None and report.candidates else 4
    rprobe = probe[rstart] if P else np.zeros(0, bool)
    rdur = 1 + -(-interp // arch.approx_units) + np.where(rprobe, n_cand, 0)
    n_probe_rays = int(rprobe.sum())
    group_probe = probe[gstart[:-1]] if P else np.zeros(0, bool)
    phase2 = np.nonzero(~group_probe)[0]
    phase2_group = int(phase2[0]) if phase2.size and n_probe_rays else -1
    pixels = trace.width * trace.height
    plan_cycles = -(-pixels // arch.adaptive_units)

    g = math.gcd(arch.fusion_units, L) if L else 1
    fuse_m, fuse_q = arch.fusion_units // g, L // g
    cycles, gen_stall, xbar_wait = _timing_kernel(
        arb, gstart, L, anchors, rend, rdur.astype(np.int64), n_probe_rays, phase2_group,
        plan_cycles, arch.addr_buffer, arch.embed_buffer, fuse_m, fuse_q, arch.fusion_latency,
        arch.density_subengines, arch.density_layers * arch.layer_latency, arch.color_subengines,
        arch.color_layers * arch.layer_latency, arch.rgb_units) if P else (0, 0, 0)

    B = len(arb)
    addresses = 8 * L * P
    lookups = addresses
    n_color = int(anchors.sum())
    n_interp = int(P - n_color)
    n_rays = len(rstart)
    cache_on = any(c > 0 for c in caches)
    events = {
        "addr_gen": addresses,
        "cache_lookup": addresses if cache_on else 0,
        "cache_hit": int(hits.sum()),
        "xbar_read": int(xreads.sum()),
        "fusion_op": P * L,
        "mac": P * arch.density_macs + n_color * arch.color_macs,
        "interp_op": n_interp,
        "render_op": n_rays + n_cand * n_probe_rays,
        "static": int(cycles),
    }
    total = float(sum(events[k] * arch.energy[k] for k in events))
    lb = max(-(-addresses // arch.addr_lanes), int(xreads.max()) if xreads.size else 0,
             -(-P * fuse_q // fuse_m) if P else 0)
    busy = {"addr_gen": B, "xbar": int(arb.sum()), "fusion": -(-P * fuse_q // fuse_m) if P else 0,
            "density": -(-P // arch.density_subengines),
            "color": -(-n_color // arch.color_subengines), "render": int(rdur.sum())}
    stalls = {"addr_gen_backpressure": int(gen_stall), "xbar_embed_backpressure": int(xbar_wait)}
    return SimStats(
        label=label or features.label(), cycles=int(cycles),
        encode_cycles=int(np.maximum(arb, 1).sum()), batches=B, points=P, rays=n_rays,
        addresses=addresses, lookups=lookups, hits=int(hits.sum()), misses=int(misses.sum()),
        hits_per_level=[int(h) for h in hits], misses_per_level=[int(m) for m in misses],
        xbar_reads=int(xreads.sum()), max_xbar_reads=int(xreads.max()) if xreads.size else 0,
        conflict_cycles=int(np.maximum(arb - 1, 0).sum()), density_invocations=P,
        color_invocations=n_color, interp_ops=n_interp, busy=busy, stalls=stalls,
        energy_events=events, energy_costs={k: arch.energy[k] for k in events},
        energy_total=total, lower_bound=int(lb),
        features={f: bool(getattr(features, f)) for f in FEATURES})
