"""Tiny fully connected networks for density and color prediction.

Weights are stored as ``(in, out)`` matrices so that ``y = act(x @ W + b)``
works on single vectors and on ``(batch, in)`` arrays alike.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid import ConfigError, GridConfig, build_levels

ACTIVATIONS = ("none", "relu")
GEO_FEAT_DIM = 15
DIR_ENC_DIM = 16

MLP_MAGIC = b"ASDRMLP0"


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)
    activation: str = "none"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ConfigError("layer weight/bias shapes disagree")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ConfigError("non-finite weights")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class MLPParams:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("an MLP needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ConfigError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.input_dim,) + tuple(l.out_dim for l in self.layers)


@dataclass(frozen=True)
class DensityOutput:
    sigma_raw: np.ndarray
    sigma: np.ndarray
    geo_feat: np.ndarray


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def forward(params: MLPParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.input_dim:
        raise ValueError(f"input has {x.shape[-1]} values, network expects {params.input_dim}")
    h = x
    for layer in params.layers:
        h = h @ layer.weight + layer.bias
        if layer.activation == "relu":
            h = np.maximum(h, 0.0)
    return h


def density_head(params: MLPParams, feat) -> DensityOutput:
    if params.output_dim != 1 + GEO_FEAT_DIM:
        raise ConfigError(f"density net must emit {1 + GEO_FEAT_DIM} values")
    out = forward(params, feat)
    raw = out[..., 0]
    return DensityOutput(raw, softplus(raw), out[..., 1:])


def color_head(params: MLPParams, geo_feat, dir_enc) -> np.ndarray:
    geo_feat = np.asarray(geo_feat, dtype=np.float64)
    dir_enc = np.broadcast_to(np.asarray(dir_enc, dtype=np.float64),
                              geo_feat.shape[:-1] + (np.shape(dir_enc)[-1],))
    x = np.concatenate([geo_feat, dir_enc], axis=-1)
    if params.output_dim != 3:
        raise ConfigError("color net must emit 3 values")
    return sigmoid(forward(params, x))


# real spherical-harmonics constants, degrees 0..3
_SH_C0 = 0.28209479177387814
_SH_C1 = 0.4886025119029199
_SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
          -1.0925484305920792, 0.5462742152960396)
_SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
          -0.4570457994644658, 1.445305721320277, -0.5900435899266435)


def sh_encode(direction) -> np.ndarray:
    """Degree-3 real SH basis (16 values) of unit view directions (..., 3)."""
    d = np.asarray(direction, dtype=np.float64)
    norm = np.linalg.norm(d, axis=-1)
    if np.any(np.abs(norm - 1.0) > 1e-9):
        raise ValueError("view directions must be unit length")
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    out = np.stack([
        np.full_like(x, _SH_C0),
        -_SH_C1 * y, _SH_C1 * z, -_SH_C1 * x,
        _SH_C2[0] * x * y, _SH_C2[1] * y * z, _SH_C2[2] * (2 * zz - xx - yy),
        _SH_C2[3] * x * z, _SH_C2[4] * (xx - yy),
        _SH_C3[0] * y * (3 * xx - yy), _SH_C3[1] * x * y * z,
        _SH_C3[2] * y * (4 * zz - xx - yy), _SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
        _SH_C3[4] * x * (4 * zz - xx - yy), _SH_C3[5] * z * (xx - yy),
        _SH_C3[6] * x * (xx - 3 * yy),
    ], axis=-1)
    return out


def flops_breakdown(density: MLPParams, color: MLPParams) -> dict:
    """Multiply-add FLOPs per point (2 per weight) and the color network's share."""
    d = sum(2 * l.in_dim * l.out_dim for l in density.layers)
    c = sum(2 * l.in_dim * l.out_dim for l in color.layers)
    return {"density_flops": d, "color_flops": c, "color_share": c / (c + d)}


# Hidden widths per preset. "compact" keeps every hidden layer at 64 units;
# "color_heavy" widens the color network so that it carries about 91% of the
# per-point FLOPs, the split measured on production-size models.
PRESETS = {
    "compact": {"density": (64,), "color": (64, 64, 64, 64)},
    "color_heavy": {"density": (64,), "color": (128, 128, 128, 128)},
}
DEFAULT_PRESET = "color_heavy"


def _dims(preset: str, grid: GridConfig):
    if preset not in PRESETS:
        raise ConfigError(f"unknown MLP preset {preset!r}; choose from {sorted(PRESETS)}")
    p = PRESETS[preset]
    dens = (grid.encoding_dim,) + p["density"] + (1 + GEO_FEAT_DIM,)
    col = (GEO_FEAT_DIM + DIR_ENC_DIM,) + p["color"] + (3,)
    return dens, col


def _chain(dims: Sequence[int], mats) -> MLPParams:
    layers = []
    for i, (w, b) in enumerate(mats):
        act = "relu" if i < len(dims) - 2 else "none"
        layers.append(Layer(w, b, act))
    return MLPParams(tuple(layers))


def seeded_mlp(dims: Sequence[int], seed: int, *, bias: bool = True) -> MLPParams:
    """He-initialised relu network with a linear output layer."""
    rng = np.random.default_rng(seed)
    mats = []
    for i, o in zip(dims, dims[1:]):
        w = rng.normal(0.0, np.sqrt(2.0 / i), size=(i, o))
        b = rng.normal(0.0, 0.1, size=o) if bias else np.zeros(o)
        mats.append((w, b))
    return _chain(dims, mats)


def seeded_networks(grid: GridConfig, seed: int, preset: str = DEFAULT_PRESET):
    dens, col = _dims(preset, grid)
    return seeded_mlp(dens, seed), seeded_mlp(col, seed + 1)


def passthrough_networks(grid: GridConfig, preset: str = DEFAULT_PRESET):
    """Hand-set weights that reproduce baked field values.

    The density net outputs the mean of channel 0 over the dense levels as
    ``sigma_raw`` and the mean of channels 1..3 as geo_feat[0:3]. The color
    net copies geo_feat[0:3] to its output, ignoring the view direction.
    Each routed value travels as a (relu(v), relu(-v)) pair so that relu
    layers pass it unchanged. Tables are expected to hold inverse-activated
    values (softplus^-1 of density, logit of color).
    """
    if grid.features < 4:
        raise ConfigError("passthrough needs at least 4 features per entry")
    dens_dims, col_dims = _dims(preset, grid)
    if min(dens_dims[1:-1]) < 8 or min(col_dims[1:-1]) < 6:
        raise ConfigError("hidden layers too narrow for passthrough routing")
    dense_levels = [lv.index for lv in build_levels(grid) if lv.dense]
    if not dense_levels:
        dense_levels = [0]
    F = grid.features

    # density net: first layer averages, middle layers copy pairs, last recombines
    mats = []
    w0 = np.zeros((dens_dims[0], dens_dims[1]))
    for ch in range(4):
        for l in dense_levels:
            w0[l * F + ch, 2 * ch] = 1.0 / len(dense_levels)
            w0[l * F + ch, 2 * ch + 1] = -1.0 / len(dense_levels)
    mats.append((w0, np.zeros(dens_dims[1])))
    for a, b in zip(dens_dims[1:-2], dens_dims[2:-1]):
        w = np.zeros((a, b))
        w[np.arange(8), np.arange(8)] = 1.0
        mats.append((w, np.zeros(b)))
    wl = np.zeros((dens_dims[-2], dens_dims[-1]))
    for ch in range(4):
        wl[2 * ch, ch] = 1.0
        wl[2 * ch + 1, ch] = -1.0
    mats.append((wl, np.zeros(dens_dims[-1])))
    density = _chain(dens_dims, mats)

    mats = []
    w0 = np.zeros((col_dims[0], col_dims[1]))
    for ch in range(3):
        w0[ch, 2 * ch] = 1.0
        w0[ch, 2 * ch + 1] = -1.0
    mats.append((w0, np.zeros(col_dims[1])))
    for a, b in zip(col_dims[1:-2], col_dims[2:-1]):
        w = np.zeros((a, b))
        w[np.arange(6), np.arange(6)] = 1.0
        mats.append((w, np.zeros(b)))
    wl = np.zeros((col_dims[-2], 3))
    for ch in range(3):
        wl[2 * ch, ch] = 1.0
        wl[2 * ch + 1, ch] = -1.0
    mats.append((wl, np.zeros(3)))
    color = _chain(col_dims, mats)
    return density, color


_ACT_CODE = {"none": 0, "relu": 1}
_CODE_ACT = {v: k for k, v in _ACT_CODE.items()}


def save_mlp(path, params: MLPParams) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MLP_MAGIC + struct.pack("<I", len(params.layers)))
        for layer in params.layers:
            fh.write(struct.pack("<III", layer.in_dim, layer.out_dim, _ACT_CODE[layer.activation]))
            fh.write(np.ascontiguousarray(layer.weight, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
    tmp.replace(path)


def load_mlp(path) -> MLPParams:
    data = Path(path).read_bytes()
    if data[:8] != MLP_MAGIC:
        raise ValueError("not an ASDRMLP0 file")
    (count,) = struct.unpack_from("<I", data, 8)
    off = 12
    layers = []
    for _ in range(count):
        i, o, code = struct.unpack_from("<III", data, off)
        off += 12
        w = np.frombuffer(data, "<f4", i * o, off).reshape(i, o).astype(np.float64)
        off += 4 * i * o
        b = np.frombuffer(data, "<f4", o, off).astype(np.float64)
        off += 4 * o
        if code not in _CODE_ACT:
            raise ValueError(f"unknown activation code {code}")
        layers.append(Layer(w, b, _CODE_ACT[code]))
    if off != len(data):
        raise ValueError("trailing bytes in MLP file")
    return MLPParams(tuple(layers))
