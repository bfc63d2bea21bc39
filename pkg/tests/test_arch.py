import dataclasses
import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asdr.arch.arbiter import arbitrate
from asdr.arch.cache import AccessRequest, CacheState, LRUCache, cache_lookup
from asdr.arch.compare import compare, compare_csv
from asdr.arch.config import ArchConfig, ArchConfigError, edge, server
from asdr.arch.layout import (assign_copy, crossbar_of, physical_address, plan_layout)
from asdr.arch.profile import profile_locality
from asdr.arch.sim import Features, SimStats, _groups, memory_pass, simulate, stats_to_csv
from asdr.grid import CORNER_OFFSETS, GridConfig, table_index, build_levels
from asdr.render import default_camera, render_asdr
from asdr.scene import make_scene
from asdr.trace import FLAG_ANCHOR, AccessTrace

SMALL_GRID = GridConfig(levels=3, table_size=2**12, n_min=4, n_max=64)


def _trace(base, resolutions, rays=None, flags=None, width=None):
    base = np.asarray(base, dtype=np.uint16)
    P = base.shape[0]
    rays = np.zeros(P, np.int64) if rays is None else np.asarray(rays, np.int64)
    pts = np.zeros(P, np.int64)
    for r in np.unique(rays):
        pts[rays == r] = np.arange((rays == r).sum())
    flags = np.full(P, FLAG_ANCHOR, np.uint8) if flags is None else np.asarray(flags, np.uint8)
    W = width or int(rays.max()) + 1 if P else 1
    return AccessTrace(W, 1, tuple(resolutions), rays, pts, flags, base)


def _random_trace(seed, P=300, grid=SMALL_GRID):
    rng = np.random.default_rng(seed)
    res = [lv.resolution for lv in build_levels(grid)]
    # a random walk keeps neighbouring points in nearby voxels, like a ray
    p = np.clip(0.5 + np.cumsum(rng.normal(0, 0.02, (P, 3)), axis=0), 0, 1)
    base = np.stack([np.minimum(np.floor(p * n), n - 1) for n in res], axis=1)
    rays = np.repeat(np.arange(-(-P // 10)), 10)[:P]
    return _trace(base, res, rays)


def _reference_memory(trace, layout, arch, caches):
    """Pure-Python replay built from cache_lookup, arbitrate and the layout helpers."""
    grid = GridConfig(levels=len(layout.levels), table_size=layout.table_size,
                      n_min=layout.levels[0].resolution, n_max=layout.levels[-1].resolution)
    specs = build_levels(grid)
    state = CacheState.create(caches)
    arb, hits, misses = [], np.zeros(len(specs), int), np.zeros(len(specs), int)
    gstart = _groups(trace, arch.points_per_batch)
    for g0, g1 in zip(gstart[:-1], gstart[1:]):
        for l, lv in enumerate(layout.levels):
            batch = []
            for lane, p in enumerate(range(g0, g1)):
                copy = assign_copy(lane, lv)
                for off in CORNER_OFFSETS:
                    v = trace.base[p, l].astype(np.int64) + off
                    addr = physical_address(v, lv, layout, copy)
                    xb, row = crossbar_of(addr, layout)
                    batch.append(AccessRequest(l, table_index(v, specs[l], grid), xb, row, copy))
            flags, miss, state = cache_lookup(batch, state)
            hits[l] += sum(flags)
            misses[l] += len(miss)
            arb.append(arbitrate(miss, coalesce=arch.xbar_coalesce))
    return np.array(arb), hits, misses


class TestLRU:
    @pytest.mark.parametrize("cap", range(1, 9))
    def test_insert_hit_and_refresh(self, cap):
        c = LRUCache(cap)
        assert not c.access(100)
        assert c.access(100)
        for t in range(cap - 1):
            assert not c.access(t)
        assert len(c) == cap
        assert c.access(100)  # refresh makes 100 most recent
        assert not c.access(999)  # evicts the oldest, tag 0 (or nothing for cap 1)
        assert 100 in c or cap == 1
        assert c.entries()[-1] == (999, 0)

    @pytest.mark.parametrize("cap", range(1, 9))
    def test_evict_after_overflow(self, cap):
        c = LRUCache(cap)
        for t in range(cap + 1):
            c.access(t)
        assert not c.access(0)

    @pytest.mark.parametrize("cap", range(1, 9))
    def test_exhaustive_against_list_model(self, cap):
        alphabet = range(cap + 2)
        for seq in itertools.product(alphabet, repeat=5):
            c, model = LRUCache(cap), []
            for t in seq:
                hit = t in model
                if hit:
                    model.remove(t)
                elif len(model) == cap:
                    model.pop(0)
                model.append(t)
                assert c.access(t) == hit
            assert [e[0] for e in c.entries()] == model
            ages = [e[1] for e in c.entries()]
            assert len(set(ages)) == len(ages) and len(c) <= cap

    def test_capacity_zero_always_misses(self):
        c = LRUCache(0)
        assert not c.access(1) and not c.access(1)


class TestCacheLookup:
    def test_eight_identical_cold(self):
        hits, misses, _ = cache_lookup([AccessRequest(0, 42)] * 8, CacheState.create([8]))
        assert sum(hits) == 7 and len(misses) == 1

    def test_no_cache_all_miss(self):
        hits, misses, _ = cache_lookup([AccessRequest(0, 42)] * 8, CacheState.create([0]))
        assert sum(hits) == 0 and len(misses) == 8

    def test_state_carries_over(self):
        st_ = CacheState.create([4, 4])
        cache_lookup([AccessRequest(0, 1), AccessRequest(1, 1)], st_)
        hits, _, _ = cache_lookup([AccessRequest(0, 1), AccessRequest(1, 2)], st_)
        assert hits == [True, False]


class TestArbitrate:
    def test_examples(self):
        assert arbitrate([(0, 1), (1, 1), (2, 5)]) == 1
        assert arbitrate([(3, r) for r in range(5)]) == 5
        assert arbitrate([("A", 1), ("A", 1), ("A", 2), ("B", 9)]) == 2
        assert arbitrate([]) == 0

    def test_without_coalescing(self):
        assert arbitrate([("A", 1), ("A", 1), ("A", 2), ("B", 9)], coalesce=False) == 3


class TestMemoryKernel:
    @pytest.mark.parametrize("hybrid", [True, False])
    @pytest.mark.parametrize("cache", [0, 1, 2, 8])
    @pytest.mark.parametrize("coalesce", [False, True])
    def test_matches_python_reference(self, hybrid, cache, coalesce):
        arch = ArchConfig(addr_lanes=16, capacity=3 * 2**12, xbar_coalesce=coalesce)
        layout = plan_layout(SMALL_GRID, arch, hybrid=hybrid)
        tr = _random_trace(cache + 10 * hybrid)
        caches = (cache,) * 3
        arb, hits, misses, _ = memory_pass(tr, layout, arch, caches)
        ref_arb, ref_hits, ref_misses = _reference_memory(tr, layout, arch, caches)
        np.testing.assert_array_equal(arb, ref_arb)
        np.testing.assert_array_equal(hits, ref_hits)
        np.testing.assert_array_equal(misses, ref_misses)


class TestSimulate:
    def test_empty_trace(self):
        tr = AccessTrace.empty(4, 4, [16])
        s = simulate(tr, None, ArchConfig(), grid=GridConfig(levels=1, n_min=16, n_max=16))
        assert s.cycles == 0 and s.energy_total == 0

    def test_single_point_closed_form(self):
        arch = ArchConfig()
        grid = GridConfig(levels=1, n_min=16, n_max=16)
        tr = _trace([[[3, 4, 5]]], [16])
        s = simulate(tr, None, arch, grid=grid)
        dlat = arch.density_layers * arch.layer_latency
        clat = arch.color_layers * arch.layer_latency
        # address generation, crossbar read, fusion, density, color, render
        assert s.cycles == 1 + 1 + arch.fusion_latency + dlat + clat + 1
        assert s.misses == 8 and s.max_xbar_reads == 1

    def test_hashed_single_point_not_faster(self):
        grid = GridConfig(levels=1, n_min=16, n_max=16)
        tr = _trace([[[3, 4, 5]]], [16])
        s = simulate(tr, None, ArchConfig(), Features.parse("-hybrid_mapping"), grid=grid)
        assert s.cycles >= 11

    def test_cache_monotone(self, asdr, cache_sweep):
        cycles = [cache_sweep[c].cycles for c in (0, 2, 4, 8, 16)]
        assert all(a >= b for a, b in zip(cycles, cycles[1:]))
        assert cache_sweep[8].cycles <= cache_sweep[0].cycles

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_cache_never_hurts_random(self, seed):
        arch = ArchConfig(addr_lanes=16, capacity=3 * 2**12)
        tr = _random_trace(seed, P=200)
        on = simulate(tr, None, arch, grid=SMALL_GRID)
        off = simulate(tr, None, arch, Features.parse("-cache"), grid=SMALL_GRID)
        assert on.cycles <= off.cycles

    def test_lower_bound(self, cache_sweep, strawman_stats):
        for s in list(cache_sweep.values()) + [strawman_stats]:
            assert s.cycles >= s.lower_bound > 0

    def test_accounting(self, cache_sweep):
        for s in cache_sweep.values():
            assert s.hits + s.misses == s.lookups
            assert sum(s.hits_per_level) == s.hits
            assert s.energy_total == pytest.approx(
                sum(s.energy_events[k] * s.energy_costs[k] for k in s.energy_events), rel=1e-15)
            assert s.color_invocations <= s.density_invocations

    def test_color_counts_follow_anchors(self, asdr, cache_sweep):
        assert cache_sweep[8].color_invocations == int(asdr.trace.anchors.sum())
        assert cache_sweep[8].density_invocations == asdr.points

    def test_deterministic(self, asdr, arch, cache_sweep):
        again = simulate(asdr.trace, asdr, arch, Features())
        assert again.to_json() == cache_sweep[8].to_json()

    def test_copies_never_increase_arbitration(self, baseline, arch):
        grid = GridConfig()
        full = plan_layout(grid, arch)
        totals = []
        for cap in (1, 2, 4, 8, 16):
            levels = tuple(dataclasses.replace(lv, copies=min(lv.copies, cap)) if lv.dense else lv
                           for lv in full.levels)
            layout = dataclasses.replace(full, levels=levels)
            arb, _, _, _ = memory_pass(baseline.trace, layout, arch, (0,) * grid.levels)
            totals.append(int(arb.sum()))
        assert all(a >= b for a, b in zip(totals, totals[1:]))
        assert totals[0] > totals[-1]

    def test_mismatched_report(self, asdr, baseline, arch):
        with pytest.raises(ValueError):
            simulate(asdr.trace, baseline, arch)

    def test_features_parse(self):
        assert Features.parse("none") == Features(False, False, False)
        assert Features.parse("all,-cache") == Features(True, False, True)
        assert Features.parse(["cache"]).label() == "cache"
        with pytest.raises(ValueError):
            Features.parse("turbo")

    def test_csv(self, cache_sweep):
        text = stats_to_csv([cache_sweep[0], cache_sweep[8]])
        lines = text.splitlines()
        assert lines[0].split(",") == list(SimStats.CSV_FIELDS)
        assert len(lines) == 3 and "\r" not in text


class TestProfile:
    def test_single_voxel(self):
        tr = _trace(np.zeros((40, 1, 3)), [16], rays=np.repeat([0, 1], 20), width=2)
        prof = profile_locality(tr)
        assert prof.inter_ray[0] == 1.0
        assert prof.intra_ray_max[0] == 20

    def test_disjoint_rays(self):
        base = np.concatenate([np.zeros((5, 1, 3)), np.full((5, 1, 3), 9)])
        prof = profile_locality(_trace(base, [16], rays=np.repeat([0, 1], 5), width=2))
        assert prof.inter_ray[0] == 0.0

    def test_single_pixel_undefined(self):
        prof = profile_locality(_trace(np.zeros((5, 1, 3)), [16], width=1))
        assert np.isnan(prof.inter_ray[0])
        assert prof.rows()[0]["inter_ray_rate"] == ""

    def test_coarse_levels_repeat_more(self, baseline):
        prof = profile_locality(baseline.trace)
        assert prof.inter_ray[0] >= prof.inter_ray[-1]
        assert np.all(np.diff(prof.inter_ray) <= 1e-12)


class TestCompare:
    def _stats(self, label, cycles, energy):
        return SimStats(label, cycles, 0, 0, 0, 0, 0, 0, 0, 0, [], [], 0, 0, 0, 0, 0, 0, {}, {},
                        {}, {}, energy, 0)

    def test_self(self):
        rows = compare([self._stats("a", 1000, 5.0)])
        assert rows[0]["speedup"] == 1.0 and rows[0]["energy_ratio"] == 1.0

    def test_four_times(self):
        rows = compare([self._stats("base", 1000, 8.0), self._stats("fast", 250, 2.0)])
        assert rows[1]["speedup"] == 4.0 and rows[1]["energy_ratio"] == 4.0

    def test_order_preserved(self):
        stats = [self._stats(n, c, 1.0) for n, c in (("a", 900), ("b", 600), ("c", 300))]
        rows = compare(stats, baseline="a")
        assert [r["label"] for r in rows] == ["a", "b", "c"]
        sp = [r["speedup"] for r in rows]
        assert sp == sorted(sp)
        assert compare_csv(rows).splitlines()[0] == "label,cycles,energy_total,speedup,energy_ratio"

    def test_empty(self):
        with pytest.raises(ValueError):
            compare([])


class TestConfig:
    def test_json_round_trip(self, tmp_path):
        cfg = edge().replace(cache_per_level=(1,) * 16)
        (tmp_path / "a.json").write_text(cfg.to_json())
        assert ArchConfig.load(tmp_path / "a.json") == cfg

    def test_unknown_key(self):
        with pytest.raises(ArchConfigError):
            ArchConfig.from_dict({"addr_lanes": 64, "warp_drive": 1})
        with pytest.raises(ArchConfigError):
            ArchConfig(energy={"photons": 1.0})

    def test_validation(self):
        with pytest.raises(ArchConfigError):
            ArchConfig(addr_lanes=12)
        with pytest.raises(ArchConfigError):
            ArchConfig(rgb_units=0)

    def test_presets(self):
        assert server().addr_lanes == 64 and edge().addr_lanes == 16
        assert server().cache_sizes(16) == (8,) * 16
        assert json.loads(server().to_json())["xbar_rows"] == 64
