"""Command-line entry point: ``geoloop <subcommand> [options]``.

Every option may also come from ``--config file.json`` (keys are the
option names with dashes replaced by underscores); explicit flags win over
the file. ``GEOLOOP_OUT`` and ``GEOLOOP_THREADS`` override the output
directory and thread cap.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
import zlib
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .attention import (
    build_layout,
    build_sparse_mask,
    expected_frame_pairs,
    mask_density,
    save_mask,
    write_density_csv,
)
from .camera import Intrinsics, load_trajectory, save_trajectory
from .distill import DivergenceError, GaussianModel, toy_dmd_train
from .io import load_bank, read_image, save_bank
from .memory import init_from_captures, load_ply, save_ply
from .metrics import evaluate
from .pipeline import (
    EXTRAPOLATION_FRAMES,
    INTERPOLATION_FRAMES,
    DegradedOracleGenerator,
    GeneratorContractError,
    OracleGenerator,
    ScenarioResult,
    capture_bank,
    default_trajectory,
    run_loop,
    save_run,
)
from .render import render_points
from .report import aggregate, load_run, write_report
from .retrieval import pixel_counts, score_views, scores_to_json, select_topk, visible_set
from .scene import SyntheticScene, build_scene, occluder_scene, raycast

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_SCHEMA = 4
EXIT_GENERATOR = 5


class CliError(Exception):
    def __init__(self, kind: str, code: int, message: str, path=None):
        super().__init__(message)
        self.kind, self.code, self.path = kind, code, path

    def line(self) -> str:
        doc = {"error": self.kind, "code": self.code, "message": str(self)}
        if self.path is not None:
            doc["path"] = str(self.path)
        return json.dumps(doc)


def substream_seed(seed: int, name: str) -> int:
    """Independent, platform-stable seed for a named consumer."""
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0])


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError("io", EXIT_IO, f"input not found: {p}", p)
    return p


def _parse_json_file(path):
    p = _existing(path)
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise CliError("schema", EXIT_SCHEMA, f"invalid JSON in {p}: {e}", p) from None


def _load(loader, path):
    p = _existing(path)
    try:
        return loader(p)
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as e:
        raise CliError("schema", EXIT_SCHEMA, f"cannot parse {p}: {e}", p) from None


# Subcommand option tables: name -> (default, type, help). Booleans are flags.
COMMON = {
    "seed": (0, int, "master seed; sub-streams are derived per module"),
    "out": ("out", str, "output directory"),
    "threads": (1, int, "cap on worker threads"),
    "ppm": (False, bool, "write PPM instead of PNG"),
}
COMMANDS = {
    "synth-scene": {
        "kind": ("random", str, "random | occluder"),
    },
    "capture": {
        "scene": (None, str, "scene JSON (default: build from --seed)"),
        "cameras": (None, str, "trajectory JSON (default: built-in arc)"),
        "frames": (None, str, "comma-separated trajectory indices to capture (default: all)"),
        "num_frames": (40, int, "length of the built-in trajectory"),
        "width": (224, int, "image width"),
        "height": (128, int, "image height"),
    },
    "init-memory": {
        "bank": (None, str, "bank directory or bank.json"),
        "stride": (2, int, "pixel subsampling stride"),
    },
    "render-view": {
        "memory": (None, str, "memory PLY"),
        "cameras": (None, str, "trajectory JSON"),
        "index": (0, int, "camera index within the trajectory"),
        "radius": (1, int, "splat radius in pixels"),
    },
    "score-views": {
        "memory": (None, str, "memory PLY"),
        "cameras": (None, str, "target cameras JSON"),
        "k": (3, int, "number of reference views"),
        "radius": (1, int, "splat radius in pixels"),
        "pixel_weighted": (False, bool, "weight points by won pixels"),
    },
    "run-loop": {
        "scene": (None, str, "scene JSON (default: build from --seed)"),
        "trajectory": (None, str, "trajectory JSON (default: built-in arc)"),
        "bank": (None, str, "capture bank (default: capture per --scenario)"),
        "scenario": ("interpolation", str, "interpolation | extrapolation"),
        "generator": ("oracle", str, "oracle | degraded"),
        "label": ("default", str, "config label for reports"),
        "k": (3, int, "reference views per segment"),
        "seg_len": (20, int, "frames per segment"),
        "stride": (2, int, "pixel subsampling stride"),
        "radius": (1, int, "splat radius in pixels"),
        "no_update": (False, bool, "skip memory updates (ablation)"),
        "ref_pool": ("captures", str, "captures | all"),
        "width": (224, int, "image width"),
        "height": (128, int, "image height"),
    },
    "attn-mask": {
        "refs": (3, int, "reference frames"),
        "targets": (40, int, "target frames"),
        "window": (8, int, "temporal window half-width in frames"),
        "grid": ("8,14", str, "token grid rows,cols"),
        "block": ("2,8,8", str, "block size t,h,w"),
        "window_mode": ("shifted", str, "shifted | centered"),
        "refs_see_targets": (False, bool, "let reference queries attend to targets"),
        "sweep": ("20,40,80,160", str, "target counts for the density CSV"),
    },
    "dmd-demo": {
        "teacher_mean": (2.0, float, "teacher mean"),
        "teacher_std": (0.5, float, "teacher std"),
        "init_mean": (0.0, float, "student initial mean"),
        "init_std": (1.0, float, "student initial std"),
        "iters": (2000, int, "generator updates"),
        "lr": (0.05, float, "learning rate"),
        "eta": (1.0, float, "DMD step size"),
        "batch": (64, int, "batch size"),
        "sigma_norm": (None, float, "constant normaliser (default: batch mean |teacher-critic|)"),
        "t_sampling": ("discrete", str, "discrete | uniform"),
        "critic_refresh": (1, int, "generator steps per critic refresh"),
    },
    "eval": {
        "generated": (None, str, "directory of generated images"),
        "ground_truth": (None, str, "directory of reference images"),
    },
    "report": {
        "runs": (None, str, "comma-separated run directories"),
    },
}
REQUIRED = {
    "init-memory": ["bank"],
    "render-view": ["memory", "cameras"],
    "score-views": ["memory", "cameras"],
    "eval": ["generated", "ground_truth"],
    "report": ["runs"],
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geoloop", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, opts in COMMANDS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON file with option values")
        for key, (_, typ, hlp) in {**COMMON, **opts}.items():
            flag = "--" + key.replace("_", "-")
            if typ is bool:
                sp.add_argument(flag, action="store_const", const=True, default=None, help=hlp)
            else:
                sp.add_argument(flag, type=typ, default=None, help=hlp)
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    """defaults < config file < environment < explicit flags."""
    table = {**COMMON, **COMMANDS[args.command]}
    cfg = {k: v[0] for k, v in table.items()}
    if args.config:
        doc = _parse_json_file(args.config)
        if not isinstance(doc, dict):
            raise CliError("config", EXIT_CONFIG, "config file must hold a JSON object", args.config)
        unknown = sorted(set(doc) - set(table))
        if unknown:
            raise CliError("config", EXIT_CONFIG, f"unknown config keys: {unknown}", args.config)
        for k, v in doc.items():
            typ = table[k][1]
            try:
                cfg[k] = v if v is None or typ in (str, bool) else typ(v)
            except (TypeError, ValueError):
                raise CliError("config", EXIT_CONFIG, f"bad value for {k}: {v!r}", args.config) from None
    if os.environ.get("GEOLOOP_OUT"):
        cfg["out"] = os.environ["GEOLOOP_OUT"]
    if os.environ.get("GEOLOOP_THREADS"):
        cfg["threads"] = int(os.environ["GEOLOOP_THREADS"])
    for k in table:
        v = getattr(args, k)
        if v is not None:
            cfg[k] = v
    for k in REQUIRED.get(args.command, []):
        if cfg.get(k) is None:
            raise CliError("config", EXIT_CONFIG, f"--{k.replace('_', '-')} is required")
    if cfg["threads"] < 1:
        raise CliError("config", EXIT_CONFIG, "--threads must be >= 1")
    return cfg


def _ints(text: str, n=None) -> list[int]:
    try:
        vals = [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise CliError("config", EXIT_CONFIG, f"expected comma-separated integers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise CliError("config", EXIT_CONFIG, f"expected {n} integers, got {text!r}")
    return vals


def _scene(cfg) -> SyntheticScene:
    if cfg.get("scene"):
        return _load(SyntheticScene.load, cfg["scene"])
    return build_scene(cfg["seed"])


def _trajectory(cfg, key="cameras"):
    if cfg.get(key):
        return _load(load_trajectory, cfg[key])
    return default_trajectory(Intrinsics.from_fov(cfg["width"], cfg["height"]), cfg.get("num_frames", 40))


def write_manifest(out: Path, command: str, cfg: dict, timings=None, extra=None) -> None:
    doc = {
        "command": command,
        "config": cfg,
        "seeds": {"master": cfg["seed"]},
        "versions": {"geoloop": __version__, "python": platform.python_version(), "numpy": np.__version__},
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    if timings is not None:
        doc["timings"] = timings
    if extra:
        doc.update(extra)
    (out / "manifest.json").write_text(json.dumps(doc, indent=1) + "\n")


def cmd_synth_scene(cfg, out):
    if cfg["kind"] == "random":
        scene = build_scene(cfg["seed"])
    elif cfg["kind"] == "occluder":
        scene = occluder_scene()
    else:
        raise CliError("config", EXIT_CONFIG, f"unknown scene kind {cfg['kind']!r}")
    scene.save(out / "scene.json")


def cmd_capture(cfg, out):
    scene = _scene(cfg)
    traj = _trajectory(cfg)
    idx = _ints(cfg["frames"]) if cfg["frames"] else list(range(len(traj)))
    if any(i < 0 or i >= len(traj) for i in idx):
        raise CliError("config", EXIT_CONFIG, f"capture indices {idx} outside trajectory of {len(traj)}")
    save_trajectory(out / "trajectory.json", traj)
    save_bank(out / "bank", [raycast(scene, traj[i]) for i in idx], cfg["ppm"])


def cmd_init_memory(cfg, out):
    bank = _load(load_bank, cfg["bank"])
    save_ply(out / "memory.ply", init_from_captures(bank, cfg["stride"]))


def cmd_render_view(cfg, out):
    mem = _load(load_ply, cfg["memory"])
    cams = _trajectory(cfg)
    if not 0 <= cfg["index"] < len(cams):
        raise CliError("config", EXIT_CONFIG, f"camera index {cfg['index']} outside 0..{len(cams) - 1}")
    render_points(mem, cams[cfg["index"]], cfg["radius"]).save(out, f"render_{cfg['index']:04d}", cfg["ppm"])


def cmd_score_views(cfg, out):
    mem = _load(load_ply, cfg["memory"])
    cams = _trajectory(cfg)
    renders = [render_points(mem, c, cfg["radius"]) for c in cams]
    vis = visible_set(mem, cams, renders=renders)
    weights = pixel_counts(mem, renders) if cfg["pixel_weighted"] else None
    scores = score_views(mem, vis, pixel_weights=weights)
    scores_to_json(scores, select_topk(scores, cfg["k"]), out / "scores.json")


def cmd_run_loop(cfg, out):
    scene = _scene(cfg)
    traj = _load(load_trajectory, cfg["trajectory"]) if cfg["trajectory"] else _trajectory(cfg, "trajectory")
    if cfg["bank"]:
        bank = _load(load_bank, cfg["bank"])
    else:
        frames = {"interpolation": INTERPOLATION_FRAMES, "extrapolation": EXTRAPOLATION_FRAMES}.get(cfg["scenario"])
        if frames is None:
            raise CliError("config", EXIT_CONFIG, f"unknown scenario {cfg['scenario']!r}")
        if max(frames) >= len(traj):
            raise CliError("config", EXIT_CONFIG, f"{cfg['scenario']} needs >= {max(frames) + 1} trajectory frames")
        bank = capture_bank(scene, [traj[i] for i in frames])
    if cfg["generator"] == "oracle":
        gen = OracleGenerator(scene)
    elif cfg["generator"] == "degraded":
        gen = DegradedOracleGenerator(scene, seed=substream_seed(cfg["seed"], "generator"))
    else:
        raise CliError("config", EXIT_CONFIG, f"unknown generator {cfg['generator']!r}")

    t0 = time.perf_counter()
    loop = run_loop(
        bank, traj, gen, k=cfg["k"], seg_len=cfg["seg_len"], stride=cfg["stride"],
        splat_radius=cfg["radius"], update=not cfg["no_update"], ref_pool=cfg["ref_pool"],
    )
    gt = [raycast(scene, c) for c in traj]
    metrics = evaluate([f.color for f in loop.frames], [g.color for g in gt])
    result = ScenarioResult(loop, gt, metrics, time.perf_counter() - t0)
    timings = save_run(result, out, cfg["scenario"], cfg["label"], cfg["ppm"])
    return timings, {
        "inputs": {"bank": cfg["bank"], "trajectory": cfg["trajectory"], "scene": cfg["scene"]},
        "seeds": {"master": cfg["seed"], "generator": substream_seed(cfg["seed"], "generator")},
    }


def cmd_attn_mask(cfg, out):
    h, w = _ints(cfg["grid"], 2)
    block = _ints(cfg["block"], 3)
    layout = build_layout(cfg["refs"], cfg["targets"], h, w, block)
    mask = build_sparse_mask(layout, cfg["window"], cfg["window_mode"], cfg["refs_see_targets"])
    save_mask(out / "mask.json", mask)
    rows = []
    for T in sorted(set(_ints(cfg["sweep"]) + [cfg["targets"]])):
        m = build_sparse_mask(build_layout(cfg["refs"], T, h, w, block), cfg["window"], cfg["window_mode"], cfg["refs_see_targets"])
        st = mask_density(m)
        expect = expected_frame_pairs(cfg["refs"], T, cfg["window"], cfg["window_mode"], cfg["refs_see_targets"])
        if st.allowed_frame_pairs != expect:
            raise RuntimeError(f"mask pair count {st.allowed_frame_pairs} != closed form {expect}")
        rows.append((T, st.allowed_frame_pairs, st.frame_density))
    write_density_csv(out / "density.csv", rows)


def cmd_dmd_demo(cfg, out):
    try:
        res = toy_dmd_train(
            GaussianModel(cfg["teacher_mean"], cfg["teacher_std"]),
            (cfg["init_mean"], cfg["init_std"]),
            iters=cfg["iters"], eta=cfg["eta"], lr=cfg["lr"], batch=cfg["batch"],
            seed=substream_seed(cfg["seed"], "distill"), sigma_norm=cfg["sigma_norm"],
            t_sampling=cfg["t_sampling"], critic_refresh=cfg["critic_refresh"],
        )
    except DivergenceError as e:
        raise CliError("diverged", EXIT_GENERATOR, str(e)) from None
    res.write_csv(out / "curve.csv")
    res.write_summary(out / "summary.json")


def _image_files(d: Path) -> list[Path]:
    files = sorted(p for p in d.rglob("*") if p.suffix in (".png", ".ppm"))
    if not files:
        raise CliError("io", EXIT_IO, f"no images under {d}", d)
    return files


def cmd_eval(cfg, out):
    gen = _image_files(_existing(cfg["generated"]))
    gt = _image_files(_existing(cfg["ground_truth"]))
    try:
        m = evaluate([read_image(p) for p in gen], [read_image(p) for p in gt])
    except ValueError as e:
        raise CliError("schema", EXIT_SCHEMA, str(e)) from None
    with open(out / "metrics.csv", "w") as fh:
        fh.write("frame,psnr,ssim\n")
        for i, (p, s) in enumerate(zip(m["psnr"], m["ssim"])):
            fh.write(f"{gen[i].name},{p!r},{s!r}\n")
    (out / "eval.json").write_text(json.dumps({"mean_psnr": m["mean_psnr"], "mean_ssim": m["mean_ssim"]}, indent=1) + "\n")


def cmd_report(cfg, out):
    runs = [_load(load_run, d) for d in str(cfg["runs"]).split(",") if d]
    try:
        rows = aggregate(runs)
    except ValueError as e:
        raise CliError("schema", EXIT_SCHEMA, str(e)) from None
    write_report(rows, out / "report.csv", out / "report.json")


HANDLERS = {
    "synth-scene": cmd_synth_scene,
    "capture": cmd_capture,
    "init-memory": cmd_init_memory,
    "render-view": cmd_render_view,
    "score-views": cmd_score_views,
    "run-loop": cmd_run_loop,
    "attn-mask": cmd_attn_mask,
    "dmd-demo": cmd_dmd_demo,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = Path(cfg["out"])
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise CliError("io", EXIT_IO, f"cannot create output directory: {e}", out) from None
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=cfg["threads"]):
            ret = HANDLERS[args.command](cfg, out)
        timings, extra = ret if ret else (None, None)
        write_manifest(out, args.command, cfg, timings, extra)
    except CliError as e:
        print(e.line(), file=sys.stderr)
        return e.code
    except GeneratorContractError as e:
        print(json.dumps({**e.to_dict(), "code": EXIT_GENERATOR, "message": str(e)}), file=sys.stderr)
        return EXIT_GENERATOR
    except OSError as e:
        print(CliError("io", EXIT_IO, str(e), getattr(e, "filename", None)).line(), file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
