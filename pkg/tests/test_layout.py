import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from asdr.arch.config import ArchConfig
from asdr.arch.layout import (LayoutError, assign_copy, crossbar_of, dehash_address,
                              dense_logical_index, padded_bits, physical_address, plan_layout,
                              storage_utilization)
from asdr.grid import GridConfig

T = 2**19


def _single(N, table_size=T, hybrid=True):
    grid = GridConfig(levels=1, table_size=table_size, n_min=N, n_max=N)
    return plan_layout(grid, ArchConfig(), hybrid=hybrid)


def _dehash_oracle(v, N, copy):
    """Assemble the address as a bit string, most significant field first."""
    k = int(N).bit_length()
    x, y, z = (format(c, f"0{k}b") for c in v)
    bits = (format(copy, "b") if copy else "") + x[-1] + y[-1] + z[-1] + x[:-1] + y[:-1] + z[:-1]
    return int(bits, 2)


class TestPlanLayout:
    def test_n16_has_16_copies(self):
        lv = _single(16).levels[0]
        assert lv.dense and lv.copies == 16
        assert lv.copy_span == 2**15

    def test_n512_is_hashed(self):
        lv = _single(512).levels[0]
        assert not lv.dense and lv.copies == 1

    def test_n63_has_two_copies(self):
        lv = _single(63).levels[0]
        assert lv.dense and lv.copies == 2

    def test_hashed_only_mode(self):
        layout = plan_layout(GridConfig(), ArchConfig(), hybrid=False)
        assert not layout.dense_mask.any()
        assert (layout.copies == 1).all()

    def test_default_config(self):
        layout = plan_layout(GridConfig(), ArchConfig())
        np.testing.assert_array_equal(layout.copies[:6], [16, 16, 16, 2, 2, 2])
        assert layout.dense_mask.sum() == 6

    def test_crossbar_ranges_disjoint(self):
        layout = plan_layout(GridConfig(), ArchConfig())
        for a, b in zip(layout.levels, layout.levels[1:]):
            assert a.xbar_last < b.xbar_first
        assert layout.num_xbars == 16 * T // 64

    @given(st.integers(1, 700))
    def test_copies_power_of_two_and_fit(self, N):
        lv = _single(N).levels[0]
        c = lv.copies
        assert c & (c - 1) == 0
        if lv.dense:
            assert c * lv.copy_span <= T < 2 * c * lv.copy_span

    def test_capacity_error(self):
        with pytest.raises(LayoutError):
            plan_layout(GridConfig(), ArchConfig(capacity=T))

    def test_rows_must_divide_table(self):
        with pytest.raises(LayoutError):
            plan_layout(GridConfig(levels=1, table_size=32, n_min=2, n_max=2), ArchConfig())


class TestDenseIndex:
    def test_examples(self):
        assert dense_logical_index((0, 0, 0), 16) == 0
        assert dense_logical_index((1, 0, 0), 16) == 1
        assert dense_logical_index((1, 2, 3), 16) == 1 + 64 + 3072 == 3137

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            dense_logical_index((17, 0, 0), 16)

    def test_padded_bits(self):
        assert [padded_bits(n) for n in (1, 15, 16, 31, 32, 63, 64)] == [1, 4, 5, 5, 6, 6, 7]


class TestDehash:
    lv16 = _single(16).levels[0]

    def test_origin(self):
        assert dehash_address((0, 0, 0), self.lv16, 0) == 0

    def test_bit_oracle(self):
        assert dehash_address((5, 2, 7), self.lv16, 1) == _dehash_oracle((5, 2, 7), 16, 1)
        assert dehash_address((5, 2, 7), self.lv16, 1) == 53779

    @given(st.integers(0, 16), st.integers(0, 16), st.integers(0, 16), st.integers(0, 15))
    def test_matches_oracle(self, x, y, z, c):
        assert dehash_address((x, y, z), self.lv16, c) == _dehash_oracle((x, y, z), 16, c)

    def test_hashed_level_rejected(self):
        with pytest.raises(LayoutError):
            dehash_address((0, 0, 0), _single(512).levels[0])

    def test_bijective_over_padded_domain(self):
        k = self.lv16.axis_bits
        g = np.stack(np.meshgrid(*[np.arange(17)] * 3, indexing="ij"), -1).reshape(-1, 3)
        for c in (0, 7, 15):
            a = dehash_address(g, self.lv16, c)
            assert np.unique(a).size == g.shape[0]
            assert a.min() >= c << (3 * k) and a.max() < (c + 1) << (3 * k)

    def test_voxel_corners_hit_eight_crossbars(self):
        layout = _single(16)
        lv = layout.levels[0]
        offs = np.array(list(itertools.product((0, 1), repeat=3)))
        base = np.stack(np.meshgrid(*[np.arange(16)] * 3, indexing="ij"), -1).reshape(-1, 3)
        corners = base[:, None, :] + offs[None]
        for c in range(lv.copies):
            addr = physical_address(corners, lv, layout, c)
            xb, _ = crossbar_of(addr, layout)
            assert all(len(set(row)) == 8 for row in xb.tolist())


class TestCopies:
    def test_single_copy(self):
        lv = _single(512).levels[0]
        assert all(assign_copy(i, lv) == 0 for i in range(40))

    def test_round_robin(self):
        lv = _single(16).levels[0]
        np.testing.assert_array_equal(assign_copy(np.arange(32), lv), np.tile(np.arange(16), 2))

    def test_uniform_histogram(self):
        lv = _single(16).levels[0]
        lanes = np.random.default_rng(0).integers(0, 2**31, size=100_000)
        hist = np.bincount(assign_copy(lanes, lv), minlength=16)
        np.testing.assert_allclose(hist / hist.mean(), 1.0, atol=0.05)


class TestUtilization:
    def test_single_dense_level(self):
        u = storage_utilization(_single(16))
        assert u == 16 * 17**3 / 2**19
        np.testing.assert_allclose(u, 0.1499, atol=5e-5)

    def test_all_hashed_full(self):
        grid = GridConfig(levels=2, table_size=2**12, n_min=32, n_max=64)
        assert storage_utilization(plan_layout(grid, ArchConfig(), hybrid=False)) == 1.0

    def test_default_values(self):
        hy = storage_utilization(plan_layout(GridConfig(), ArchConfig()))
        ha = storage_utilization(plan_layout(GridConfig(), ArchConfig(), hybrid=False))
        np.testing.assert_allclose([ha, hy], [0.6273, 0.7124], atol=1e-4)
