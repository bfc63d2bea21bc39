import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asdr.grid import ConfigError, GridConfig, bake_from_field, encode, make_tables
from asdr.mlp import (DEFAULT_PRESET, PRESETS, Layer, MLPParams, color_head, density_head,
                      flops_breakdown, forward, load_mlp, passthrough_networks, save_mlp,
                      seeded_mlp, seeded_networks, sh_encode, sigmoid, softplus)

GRID = GridConfig(levels=4, table_size=2**12, n_min=4, n_max=32)


def _naive_forward(params, x):
    h = list(map(float, x))
    for layer in params.layers:
        out = []
        for j in range(layer.out_dim):
            s = float(layer.bias[j])
            for i in range(layer.in_dim):
                s += h[i] * float(layer.weight[i, j])
            out.append(max(s, 0.0) if layer.activation == "relu" else s)
        h = out
    return np.array(h)


def _zero(dims, bias=None, last="none"):
    layers = []
    for k, (i, o) in enumerate(zip(dims, dims[1:])):
        b = np.zeros(o) if bias is None or k < len(dims) - 2 else np.asarray(bias, float)
        layers.append(Layer(np.zeros((i, o)), b, "relu" if k < len(dims) - 2 else last))
    return MLPParams(tuple(layers))


class TestForward:
    def test_identity_layer(self):
        p = MLPParams((Layer(np.eye(5), np.zeros(5)),))
        x = np.arange(5.0)
        np.testing.assert_array_equal(forward(p, x), x)

    def test_zero_weights_give_activated_bias(self):
        b = np.array([-1.0, 0.5, 2.0])
        np.testing.assert_array_equal(forward(MLPParams((Layer(np.zeros((4, 3)), b, "relu"),)),
                                              np.ones(4)), np.maximum(b, 0))
        np.testing.assert_array_equal(forward(MLPParams((Layer(np.zeros((4, 3)), b),)),
                                              np.ones(4)), b)

    def test_naive_oracle(self):
        p = seeded_mlp((12, 20, 7), seed=4)
        x = np.random.default_rng(1).normal(size=12)
        np.testing.assert_allclose(forward(p, x), _naive_forward(p, x), rtol=1e-6)

    def test_batch_matches_rows(self):
        p = seeded_mlp((6, 9, 3), seed=2)
        X = np.random.default_rng(2).normal(size=(10, 6))
        np.testing.assert_allclose(forward(p, X), np.stack([forward(p, r) for r in X]), rtol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            forward(seeded_mlp((6, 3), 0), np.ones(5))

    def test_layers_must_chain(self):
        with pytest.raises(ConfigError):
            MLPParams((Layer(np.zeros((3, 4)), np.zeros(4)), Layer(np.zeros((5, 2)), np.zeros(2))))

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.01, 100.0), st.integers(0, 1000))
    def test_positive_homogeneity_without_bias(self, k, seed):
        p = seeded_mlp((8, 16, 16, 4), seed=seed, bias=False)
        x = np.random.default_rng(seed).normal(size=8)
        np.testing.assert_allclose(forward(p, k * x), k * forward(p, x), rtol=1e-9, atol=1e-12)


class TestHeads:
    def test_softplus_sigmoid_at_zero(self):
        assert softplus(0.0) == math.log(2.0)
        assert sigmoid(0.0) == 0.5

    def test_zero_density_net(self):
        out = density_head(_zero((64, 64, 16)), np.ones(64))
        np.testing.assert_allclose(out.sigma, math.log(2.0), rtol=1e-15)
        np.testing.assert_array_equal(out.geo_feat, np.zeros(15))

    def test_zero_color_net(self):
        rgb = color_head(_zero((31, 64, 3)), np.ones(15), sh_encode(np.array([0, 0, 1.0])))
        np.testing.assert_array_equal(rgb, [0.5, 0.5, 0.5])

    def test_seeded_heads_match_oracle(self):
        dens, col = seeded_networks(GRID, seed=7)
        feat = np.random.default_rng(3).normal(size=GRID.encoding_dim)
        out = density_head(dens, feat)
        ref = _naive_forward(dens, feat)
        np.testing.assert_allclose(out.sigma_raw, ref[0], rtol=1e-6)
        np.testing.assert_allclose(out.sigma, math.log1p(math.exp(ref[0])), rtol=1e-6)
        d = np.array([0.3, -0.4, 0.5])
        d /= np.linalg.norm(d)
        enc = sh_encode(d)
        ref_c = 1 / (1 + np.exp(-_naive_forward(col, np.concatenate([ref[1:], enc]))))
        np.testing.assert_allclose(color_head(col, out.geo_feat, enc), ref_c, rtol=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_color_in_unit_cube(self, seed):
        _, col = seeded_networks(GRID, seed=seed % 1000)
        rng = np.random.default_rng(seed)
        g = rng.normal(scale=50.0, size=(20, 15))
        d = rng.normal(size=(20, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        rgb = color_head(col, g, sh_encode(d))
        assert np.all((rgb >= 0) & (rgb <= 1))

    def test_sigma_non_negative(self):
        dens, _ = seeded_networks(GRID, seed=1)
        out = density_head(dens, np.random.default_rng(0).normal(scale=100, size=(50, 16)))
        assert np.all(out.sigma >= 0)

    def test_passthrough_reproduces_baked_constant(self):
        s, c = 7.5, np.array([0.2, 0.6, 0.9])
        tables = make_tables(GRID)
        bake_from_field(lambda p: (np.full(len(p), s), np.tile(c, (len(p), 1))), tables, GRID,
                        activation_inverse=True)
        dens, col = passthrough_networks(GRID)
        feat = encode(np.random.default_rng(0).random((10, 3)), tables, GRID)
        out = density_head(dens, feat)
        np.testing.assert_allclose(out.sigma, s, rtol=1e-5)
        d = np.tile([0.0, 0.0, 1.0], (10, 1))
        np.testing.assert_allclose(color_head(col, out.geo_feat, sh_encode(d)),
                                   np.tile(c, (10, 1)), atol=1e-5)


class TestSH:
    def test_length_and_constant(self):
        e = sh_encode(np.array([1.0, 0, 0]))
        assert e.shape == (16,)
        assert e[0] == pytest.approx(0.5 / math.sqrt(math.pi))

    def test_orthonormal_on_sphere(self):
        # Fibonacci lattice: near-uniform quadrature on the sphere
        n = 200_000
        i = np.arange(n) + 0.5
        z = 1 - 2 * i / n
        phi = math.pi * (1 + 5**0.5) * i
        r = np.sqrt(1 - z * z)
        d = np.stack([r * np.cos(phi), r * np.sin(phi), z], -1)
        Y = sh_encode(d)
        gram = 4 * math.pi * (Y.T @ Y) / n
        np.testing.assert_allclose(gram, np.eye(16), atol=1e-3)

    def test_rejects_unnormalised(self):
        with pytest.raises(ValueError):
            sh_encode(np.array([1.0, 1.0, 0.0]))


class TestFlops:
    @given(st.lists(st.integers(1, 300), min_size=2, max_size=6),
           st.lists(st.integers(1, 300), min_size=2, max_size=6))
    def test_closed_form(self, dd, cd):
        d = _zero(dd)
        c = _zero(cd)
        out = flops_breakdown(d, c)
        exp_d = sum(2 * a * b for a, b in zip(dd, dd[1:]))
        exp_c = sum(2 * a * b for a, b in zip(cd, cd[1:]))
        assert out["density_flops"] == exp_d and out["color_flops"] == exp_c
        assert out["color_share"] == exp_c / (exp_c + exp_d)

    def test_equal_shapes_split_evenly(self):
        assert flops_breakdown(_zero((10, 20, 3)), _zero((10, 20, 3)))["color_share"] == 0.5

    def test_presets(self):
        shares = {}
        for name in PRESETS:
            d, c = seeded_networks(GridConfig(), 0, name)
            shares[name] = flops_breakdown(d, c)["color_share"]
        # 64->64->16 against 31->64x4->3, and the widened 31->128x4->3 color net
        assert shares["compact"] == pytest.approx(2 * (31 * 64 + 3 * 64 * 64 + 64 * 3)
                                                  / (2 * (31 * 64 + 3 * 64 * 64 + 64 * 3)
                                                     + 2 * (64 * 64 + 64 * 16)))
        assert DEFAULT_PRESET == "color_heavy"
        assert 0.90 <= shares[DEFAULT_PRESET] <= 0.94


class TestFile:
    def test_round_trip(self, tmp_path):
        p = seeded_mlp((5, 7, 3), seed=9)
        save_mlp(tmp_path / "m.mlp", p)
        q = load_mlp(tmp_path / "m.mlp")
        assert q.shape == p.shape
        assert [l.activation for l in q.layers] == [l.activation for l in p.layers]
        for a, b in zip(p.layers, q.layers):
            np.testing.assert_array_equal(b.weight, a.weight.astype(np.float32))
            np.testing.assert_array_equal(b.bias, a.bias.astype(np.float32))

    def test_magic(self, tmp_path):
        save_mlp(tmp_path / "m.mlp", seeded_mlp((2, 2), 0))
        assert (tmp_path / "m.mlp").read_bytes()[:8] == b"ASDRMLP0"
        (tmp_path / "bad.mlp").write_bytes(b"XXXXXXXX" + bytes(8))
        with pytest.raises(ValueError):
            load_mlp(tmp_path / "bad.mlp")
