"""Command-line experiment harness: render, simulate, sweep, profile, bake.

Settings come from built-in defaults, then an optional JSON file given with
``--config``, then command-line flags; later sources win. Every command
writes into ``--out`` and finishes with a ``manifest.json`` that echoes the
resolved settings, which is enough to re-run it bit for bit.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import shutil
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .grid import ConfigError, GridConfig, save_tables
from .metrics import psnr, ssim
from .mlp import DEFAULT_PRESET, PRESETS as MLP_PRESETS, save_mlp
from .ppm import encode_ppm
from .render import default_camera, render_asdr, render_baseline, render_fixed
from .scene import SCENE_KINDS, make_grid_scene, make_scene
from .volume import DEFAULT_DELTA

SWEEP_AXES = ("delta", "n", "d", "cache")
SWEEP_DEFAULTS = {
    "delta": [0.0, 1 / 8192, 1 / 2048, 1 / 512, 1 / 128],
    "n": [1, 2, 4, 8],
    "d": [1, 2, 5, 10],
    "cache": [0, 2, 4, 8, 16],
}


@dataclass
class ExperimentConfig:
    scene: str = "spheres"
    seed: int = 0
    model: str = "analytic"  # "analytic", "grid" (baked passthrough) or "seeded"
    mlp_preset: str = DEFAULT_PRESET
    width: int = 128
    height: int = 128
    ns: int = 64
    d: int = 5
    delta: float = DEFAULT_DELTA
    candidates: list | None = None
    n: int = 2
    eps: float = 1e-4
    arch: str | None = None  # path to an arch JSON document
    arch_preset: str = "server"
    cache: int | None = None  # per-level cache entries, overrides the arch config
    features: str = "all"
    axis: str = "delta"
    values: list | None = None
    trace: str | None = None
    out: str = "out"

    def validate(self) -> "ExperimentConfig":
        if self.scene not in SCENE_KINDS:
            raise ConfigError(f"unknown scene {self.scene!r}")
        if self.model not in ("analytic", "grid", "seeded"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.mlp_preset not in MLP_PRESETS:
            raise ConfigError(f"unknown MLP preset {self.mlp_preset!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        for name in ("width", "height", "ns", "d", "n"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0 <= self.eps < 1:
            raise ConfigError("eps must be in [0, 1)")
        if self.cache is not None and self.cache < 0:
            raise ConfigError("cache must be >= 0")
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {self.axis!r}; choose from {SWEEP_AXES}")
        if self.candidates is not None and any(not 1 <= c <= self.ns for c in self.candidates):
            raise ConfigError("candidates must lie in [1, ns]")
        from .arch.config import PRESETS
        if self.arch_preset not in PRESETS:
            raise ConfigError(f"unknown arch preset {self.arch_preset!r}")
        from .arch.sim import Features
        try:
            Features.parse(self.features)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        return self

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        data = json.loads(Path(path).read_text())
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        if data.get("tool") == "asdr" and isinstance(data.get("config"), dict):
            data = data["config"]  # a run manifest
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**data)


# ---------------------------------------------------------------- outputs


class Bundle:
    """Collects output files in a staging directory and publishes them together."""

    def __init__(self, out: Path):
        self.out = out
        self.stage = out / f".staging-{os.getpid()}"
        self.names: list[str] = []

    def __enter__(self):
        self.out.mkdir(parents=True, exist_ok=True)
        if self.stage.exists():
            shutil.rmtree(self.stage)
        self.stage.mkdir()
        return self

    def write_bytes(self, name: str, data: bytes):
        (self.stage / name).write_bytes(data)
        self.names.append(name)

    def write_text(self, name: str, text: str):
        self.write_bytes(name, text.encode("utf-8"))

    def path(self, name: str) -> Path:
        self.names.append(name)
        return self.stage / name

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            for name in self.names:
                os.replace(self.stage / name, self.out / name)
        shutil.rmtree(self.stage, ignore_errors=True)
        return False


def _csv(rows: list[dict], fields) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k, "")) for k in fields})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if v == float("inf"):
            return "inf"
        return f"{v:.6f}"
    return v


def _manifest(command: str, cfg: ExperimentConfig, files: list[str]) -> str:
    # the output location is not part of the result, so it is left out and
    # identical runs into different directories produce identical trees
    conf = {k: v for k, v in dataclasses.asdict(cfg).items() if k != "out"}
    doc = {"tool": "asdr", "version": __version__, "command": command,
           "config": conf, "seeds": {"scene": cfg.seed},
           "files": sorted(files)}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- helpers


def _scene(cfg: ExperimentConfig):
    if cfg.model == "analytic":
        return make_scene(cfg.scene, cfg.seed)
    mode = "passthrough" if cfg.model == "grid" else "seeded"
    return make_grid_scene(cfg.scene, cfg.seed, grid_config=GridConfig(seed=cfg.seed), mode=mode,
                           preset=cfg.mlp_preset)


def _arch(cfg: ExperimentConfig):
    from .arch.config import PRESETS, ArchConfig
    arch = ArchConfig.load(cfg.arch) if cfg.arch else PRESETS[cfg.arch_preset]()
    if cfg.cache is not None:
        arch = arch.replace(cache_entries=cfg.cache, cache_per_level=None)
    return arch


def _asdr(cfg, scene, camera, **over):
    kw = dict(ns=cfg.ns, d=cfg.d, delta=cfg.delta, candidates=cfg.candidates, n=cfg.n,
              eps=cfg.eps)
    kw.update(over)
    return render_asdr(scene, camera, **kw)


def _render_row(label, rep, ref):
    return {"label": label, "psnr": psnr(rep.image, ref.image), "ssim": ssim(rep.image, ref.image),
            "mean_samples": float(rep.sample_counts.mean()),
            "mean_plan": float(rep.plan.mean_count) if rep.plan is not None else float(rep.sample_counts.mean()),
            "points": rep.points, "density_calls": rep.density_calls,
            "color_calls": rep.color_calls}


RENDER_FIELDS = ("label", "psnr", "ssim", "mean_samples", "mean_plan", "points", "density_calls",
                 "color_calls")


# ---------------------------------------------------------------- commands


def cmd_render(cfg: ExperimentConfig, bundle: Bundle):
    scene, cam = _scene(cfg), default_camera(cfg.width, cfg.height)
    base = render_baseline(scene, cam, cfg.ns)
    asdr = _asdr(cfg, scene, cam)
    bundle.write_bytes("baseline.ppm", encode_ppm(base.image))
    bundle.write_bytes("asdr.ppm", encode_ppm(asdr.image))
    base.trace.save(bundle.path("trace_baseline.bin"))
    asdr.trace.save(bundle.path("trace_asdr.bin"))
    rows = [_render_row("baseline", base, base), _render_row("asdr", asdr, base)]
    bundle.write_text("metrics.csv", _csv(rows, RENDER_FIELDS))
    plan = asdr.plan.counts
    bundle.write_text("plan.csv", "\n".join(",".join(str(int(v)) for v in row) for row in plan) + "\n")
    return {"psnr": rows[1]["psnr"], "mean_plan": rows[1]["mean_plan"]}


def _sim_configs(cfg):
    from .arch.sim import Features
    feats = Features.parse(cfg.features)
    return [("strawman", "baseline", Features(False, False, False)),
            ("baseline_trace", "baseline", feats),
            ("asdr_no_cache", "asdr", dataclasses.replace(feats, cache=False)),
            ("asdr", "asdr", feats)]


def cmd_simulate(cfg: ExperimentConfig, bundle: Bundle):
    from .arch.compare import compare, compare_csv
    from .arch.sim import Features, simulate, stats_to_csv
    from .trace import AccessTrace
    arch = _arch(cfg)
    stats = []
    if cfg.trace:
        path = Path(cfg.trace)
        if not path.exists():
            raise ConfigError(f"trace file {path} does not exist")
        tr = AccessTrace.load(path)
        feats = Features.parse(cfg.features)
        for label, f in (("cache_off", Features(feats.hybrid_mapping, False, feats.approximation)),
                         ("cache_on", Features(feats.hybrid_mapping, True, feats.approximation))):
            stats.append(simulate(tr, None, arch, f, label=label))
    else:
        scene, cam = _scene(cfg), default_camera(cfg.width, cfg.height)
        reps = {"baseline": render_baseline(scene, cam, cfg.ns), "asdr": _asdr(cfg, scene, cam)}
        for label, which, f in _sim_configs(cfg):
            rep = reps[which]
            stats.append(simulate(rep.trace, rep, arch, f, label=label))
    rows = compare(stats, 0)
    bundle.write_text("sim.json", json.dumps([s.to_dict() for s in stats], indent=2,
                                             sort_keys=True) + "\n")
    bundle.write_text("sim.csv", stats_to_csv(stats))
    bundle.write_text("compare.csv", compare_csv(rows))
    bundle.write_text("arch.json", arch.to_json())
    return {r["label"]: r["speedup"] for r in rows}


def cmd_sweep(cfg: ExperimentConfig, bundle: Bundle):
    from .arch.sim import Features, simulate
    arch = _arch(cfg)
    feats = Features.parse(cfg.features)
    scene, cam = _scene(cfg), default_camera(cfg.width, cfg.height)
    base = render_baseline(scene, cam, cfg.ns, trace=False)
    values = cfg.values if cfg.values is not None else SWEEP_DEFAULTS[cfg.axis]
    rows = []
    shared = None
    for v in values:
        if cfg.axis == "cache":
            if shared is None:
                shared = _asdr(cfg, scene, cam)
            rep = shared
            st = simulate(rep.trace, rep, arch.replace(cache_entries=int(v), cache_per_level=None), feats)
        else:
            over = {"delta": {"delta": float(v)}, "n": {"n": int(v)}, "d": {"d": int(v)}}[cfg.axis]
            rep = _asdr(cfg, scene, cam, **over)
            st = simulate(rep.trace, rep, arch, feats)
        row = _render_row(str(v), rep, base)
        row.update({"value": v, "cycles": st.cycles, "encode_cycles": st.encode_cycles,
                    "energy": st.energy_total, "hit_rate": st.hit_rate})
        rows.append(row)
    fields = ("value", "psnr", "ssim", "mean_samples", "mean_plan", "points", "density_calls",
              "color_calls", "cycles", "encode_cycles", "energy", "hit_rate")
    bundle.write_text(f"sweep_{cfg.axis}.csv", _csv(rows, fields))
    return {"rows": len(rows)}


def cmd_profile(cfg: ExperimentConfig, bundle: Bundle):
    from .arch.profile import profile_locality
    scene, cam = _scene(cfg), default_camera(cfg.width, cfg.height)
    rep = render_fixed(scene, cam, cfg.ns)
    prof = profile_locality(rep.trace)
    bundle.write_text("locality.csv", _csv(prof.rows(), ("level", "resolution", "inter_ray_rate",
                                                          "intra_ray_max", "intra_ray_mean")))
    return {"coarsest_rate": float(prof.inter_ray[0])}


def cmd_bake(cfg: ExperimentConfig, bundle: Bundle):
    gc = GridConfig(seed=cfg.seed)
    mode = "seeded" if cfg.model == "seeded" else "passthrough"
    gs = make_grid_scene(cfg.scene, cfg.seed, grid_config=gc, mode=mode, preset=cfg.mlp_preset)
    save_tables(bundle.path("grid.bin"), gs.tables, gc)
    save_mlp(bundle.path("density.mlp"), gs.density_net)
    save_mlp(bundle.path("color.mlp"), gs.color_net)
    return {"levels": gc.levels}


COMMANDS = {"render": cmd_render, "simulate": cmd_simulate, "sweep": cmd_sweep,
            "profile": cmd_profile, "bake": cmd_bake}


# ---------------------------------------------------------------- parsing


def _u64(s: str) -> int:
    v = int(s, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _float(s: str) -> float:
    s = s.strip()
    if "/" in s:
        num, den = s.split("/", 1)
        return float(num) / float(den)
    return float(s)


def _number_list(s: str) -> list:
    out = []
    for tok in s.split(","):
        v = _float(tok)
        out.append(int(v) if v.is_integer() and "." not in tok and "/" not in tok else v)
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config (unknown keys are rejected)")
    common.add_argument("--scene", choices=SCENE_KINDS)
    common.add_argument("--seed", type=_u64)
    common.add_argument("--model", choices=("analytic", "grid", "seeded"))
    common.add_argument("--mlp-preset", dest="mlp_preset", choices=sorted(MLP_PRESETS))
    common.add_argument("--width", type=int)
    common.add_argument("--height", type=int)
    common.add_argument("--ns", type=int)
    common.add_argument("--d", type=int)
    common.add_argument("--delta", type=_float, help="difficulty threshold, e.g. 1/2048")
    common.add_argument("--candidates", type=_number_list)
    common.add_argument("--n", type=int, help="color group size")
    common.add_argument("--eps", type=_float, help="early-termination transmittance (0 = off)")
    common.add_argument("--arch", help="arch config JSON path")
    common.add_argument("--arch-preset", dest="arch_preset", choices=("server", "edge"))
    common.add_argument("--cache", type=int, help="cache entries per level")
    common.add_argument("--features", help="comma list of hybrid_mapping,cache,approximation or all/none")
    common.add_argument("--out", help="output directory")
    p = argparse.ArgumentParser(prog="asdr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"asdr {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("render", parents=[common], help="baseline and adaptive renders with metrics")
    s = sub.add_parser("simulate", parents=[common], help="architecture simulation and comparison")
    s.add_argument("--trace", help="replay an existing trace file instead of rendering")
    w = sub.add_parser("sweep", parents=[common], help="metric-vs-knob CSV")
    w.add_argument("--axis", choices=SWEEP_AXES)
    w.add_argument("--values", type=_number_list)
    sub.add_parser("profile", parents=[common], help="per-level locality statistics")
    sub.add_parser("bake", parents=[common], help="write baked grid tables and networks")
    return p


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for k, v in vars(args).items():
        if k in names and v is not None:
            setattr(cfg, k, v)
    return cfg.validate()


def _apply_threads():
    val = os.environ.get("ASDR_THREADS")
    if not val:
        return
    try:
        n = int(val)
    except ValueError:
        raise ConfigError(f"ASDR_THREADS must be an integer, got {val!r}") from None
    if n < 1:
        raise ConfigError("ASDR_THREADS must be >= 1")
    import numba
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_threads()
        cfg = resolve_config(args)
        with Bundle(Path(cfg.out)) as bundle:
            summary = COMMANDS[args.command](cfg, bundle)
            files = list(bundle.names)
            bundle.write_text("manifest.json", _manifest(args.command, cfg, files))
    except (ConfigError, ValueError, OSError) as e:
        print(f"asdr {args.command}: error: {e}", file=sys.stderr)
        return 2 if isinstance(e, ConfigError) else 1
    print(json.dumps({k: _fmt(v) for k, v in summary.items()}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
