"""Command line: ``hoirefine synth|train|eval|gradcheck``.

Each command reads an optional JSON config (``--config``); flags given on the
command line override its values. Outputs are plain JSON/CSV/OBJ and are a
deterministic function of the flags and seed.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from contextlib import nullcontext
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .mesh import MeshError, save_mesh
from .metrics import METRIC_KEYS, MetricsReport
from .model import CheckpointError, ModelConfig, load_checkpoint, save_checkpoint
from .synth import NoiseParams, export_scene, load_scene, make_scene
from .train import (OBJ_SAMPLES, PreparedScene, TrainConfig, TrainingDiverged, _map, evaluate_scene,
                    gradcheck, train)

log = logging.getLogger("hoirefine")

MANIFEST = "manifest.json"
LOSS_COLUMNS = ("epoch", "loss_total", "loss_hand", "loss_obj")


class UsageError(ValueError):
    """Invalid parameter value; reported without a traceback."""


# ------------------------------------------------------------------ config


def _settings(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < JSON config file < explicit flags."""
    out = dict(defaults)
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        unknown = sorted(set(data) - set(defaults))
        if unknown:
            raise UsageError(f"unknown config key {unknown[0]!r}")
        out.update(data)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    return out


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise UsageError(msg)


def _check_int(s: dict, key: str, lo: int, hi: int | None = None) -> None:
    val = s[key]
    _require(isinstance(val, (int, np.integer)) and not isinstance(val, bool), f"{key} must be an integer")
    if hi is None:
        _require(val >= lo, f"{key} must be ≥ {lo}")
    else:
        _require(lo <= val <= hi, f"{key} must lie in [{lo}, {hi}]")


def _check_float(s: dict, key: str, lo: float, hi: float | None = None, open_lo: bool = False) -> None:
    val = s[key]
    _require(isinstance(val, (int, float)) and not isinstance(val, bool) and np.isfinite(val),
             f"{key} must be a finite number")
    if open_lo:
        _require(val > lo, f"{key} must be > {lo}")
    else:
        _require(val >= lo, f"{key} must be ≥ {lo}")
    if hi is not None:
        _require(val < hi, f"{key} must be < {hi}")


def _model_config(s: dict) -> ModelConfig:
    for key in ("descriptor_dim", "hidden", "att_dim"):
        _check_int(s, key, 1, 4096)
    _check_float(s, "gamma", 0.0, 1.0, open_lo=True)
    return ModelConfig(descriptor_dim=s["descriptor_dim"], hidden=s["hidden"], att_dim=s["att_dim"],
                       gamma=float(s["gamma"]), use_ec=not s["no_ec"], use_ea=not s["no_ea"])


# ----------------------------------------------------------------- helpers


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _load_scenes(scene_dir: str) -> tuple[list[str], list]:
    root = Path(scene_dir)
    try:
        manifest = json.loads((root / MANIFEST).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read scene manifest in {root}: {exc}") from exc
    names = [entry["dir"] for entry in manifest["scenes"]]
    _require(len(names) >= 1, f"manifest in {root} lists no scenes")
    return names, [load_scene(root / n) for n in names]


def _metrics_block(names: list[str], reports: list[MetricsReport]) -> dict:
    return {
        "scenes": [{"scene": n, **r.to_dict()} for n, r in zip(names, reports)],
        "mean": MetricsReport.mean(reports).to_dict(),
    }


def _evaluate_all(names, preps, params, config: ModelConfig, threads: int, out: Path,
                  export_meshes: bool, seed) -> None:
    evals = _map(lambda p: evaluate_scene(p, params, config), preps, threads)
    report = {
        "seed": seed,
        "initial": _metrics_block(names, [e.initial for e in evals]),
        "refine": _metrics_block(names, [e.refined for e in evals]),
    }
    _write_json(out / "metrics.json", report)
    _write_json(out / "graphs.json", {n: e.graphs.summary() for n, e in zip(names, evals)})
    if export_meshes:
        for n, e in zip(names, evals):
            d = out / "meshes" / n
            d.mkdir(parents=True, exist_ok=True)
            save_mesh(e.hand, d / "hand_refined.obj")
            save_mesh(e.obj, d / "obj_refined.obj")
    print(f"{'metric':<22}{'initial':>10}{'refine':>10}")
    for key in METRIC_KEYS:
        print(f"{key:<22}{report['initial']['mean'][key]:>10.2f}{report['refine']['mean'][key]:>10.2f}")


# ---------------------------------------------------------------- commands

SYNTH_DEFAULTS = {"count": 20, "seed": 1, "out": None, "vertex_sigma": 3.0, "translation": 10.0,
                  "rotation": 0.0, "threads": 1}


def cmd_synth(args) -> int:
    s = _settings(args, SYNTH_DEFAULTS)
    _check_int(s, "count", 1)
    _check_int(s, "seed", 0, 2**64 - 1)
    _check_int(s, "threads", 1, 256)
    for key in ("vertex_sigma", "translation", "rotation"):
        _check_float(s, key, 0.0)
    _require(s["out"] is not None, "--out is required")
    noise = NoiseParams(float(s["vertex_sigma"]), float(s["translation"]), float(s["rotation"]))
    rng = np.random.default_rng(s["seed"])
    seeds = [int(x) for x in rng.integers(0, 2**63, size=s["count"])]
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(s["count"] - 1)))
    names = [f"scene_{i:0{width}d}" for i in range(s["count"])]

    def build(item):
        name, seed = item
        export_scene(make_scene(seed, noise), out / name)
        return name

    _map(build, list(zip(names, seeds)), s["threads"])
    _write_json(out / MANIFEST, {
        "seed": s["seed"], "count": s["count"], "noise": asdict(noise),
        "scenes": [{"dir": n, "seed": sd} for n, sd in zip(names, seeds)],
    })
    print(f"wrote {s['count']} scenes to {out}")
    return 0


MODEL_DEFAULTS = {"descriptor_dim": 64, "hidden": 64, "att_dim": 32, "gamma": 0.01,
                  "no_ec": False, "no_ea": False}
TRAIN_DEFAULTS = {"scenes": None, "out": None, "seed": 1, "epochs": 200, "lr": 1e-4,
                  "lr_drop_epoch": None, "lr_drop_to": 1e-5, "threads": 1, "obj_samples": OBJ_SAMPLES,
                  "export_meshes": False, **MODEL_DEFAULTS}


def cmd_train(args) -> int:
    s = _settings(args, TRAIN_DEFAULTS)
    _require(s["scenes"] is not None and s["out"] is not None, "--scenes and --out are required")
    _check_int(s, "seed", 0, 2**64 - 1)
    _check_int(s, "epochs", 0)
    _check_float(s, "lr", 0.0)
    _check_float(s, "lr_drop_to", 0.0)
    if s["lr_drop_epoch"] is not None:
        _check_int(s, "lr_drop_epoch", 0)
    _check_int(s, "threads", 1, 256)
    _check_int(s, "obj_samples", 1)
    mc = _model_config(s)
    tc = TrainConfig(seed=s["seed"], epochs=s["epochs"], lr=float(s["lr"]), lr_drop_epoch=s["lr_drop_epoch"],
                     lr_drop_to=float(s["lr_drop_to"]), threads=s["threads"])
    names, scenes = _load_scenes(s["scenes"])
    preps = _map(lambda sc: PreparedScene.from_scene(sc, s["obj_samples"]), scenes, s["threads"])
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    # output location and thread count do not affect results; leaving them
    # out keeps reruns byte-identical
    _write_json(out / "run_config.json", {k: v for k, v in s.items() if k not in ("out", "threads")})

    result = train(preps, mc, tc)
    with open(out / "loss.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_COLUMNS)
        for row in result.curve:
            writer.writerow([row["epoch"]] + [repr(float(row[c])) for c in LOSS_COLUMNS[1:]])
    save_checkpoint(out / "checkpoint.json", result.params, mc, {"seed": s["seed"], "epochs": s["epochs"]})
    if result.curve:
        print(f"epoch {result.curve[-1]['epoch']}: loss {result.curve[-1]['loss_total']:.4f}")
    _evaluate_all(names, preps, result.params, mc, s["threads"], out, s["export_meshes"], s["seed"])
    return 0


EVAL_DEFAULTS = {"scenes": None, "checkpoint": None, "out": None, "threads": 1, "obj_samples": OBJ_SAMPLES,
                 "export_meshes": False}


def cmd_eval(args) -> int:
    s = _settings(args, EVAL_DEFAULTS)
    _require(all(s[k] is not None for k in ("scenes", "checkpoint", "out")),
             "--scenes, --checkpoint and --out are required")
    _check_int(s, "threads", 1, 256)
    params, mc, extra = load_checkpoint(s["checkpoint"])
    names, scenes = _load_scenes(s["scenes"])
    preps = _map(lambda sc: PreparedScene.from_scene(sc, s["obj_samples"]), scenes, s["threads"])
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    _evaluate_all(names, preps, params, mc, s["threads"], out, s["export_meshes"], extra.get("seed"))
    return 0


GRADCHECK_DEFAULTS = {"seed": 0, "descriptor_dim": 8, "hidden": 8, "att_dim": 4, "directions": 20,
                      "corrupt": None}


def cmd_gradcheck(args) -> int:
    s = _settings(args, GRADCHECK_DEFAULTS)
    _check_int(s, "seed", 0, 2**64 - 1)
    _check_int(s, "directions", 1, 10_000)
    for key in ("descriptor_dim", "hidden", "att_dim"):
        _check_int(s, key, 1, 512)
    mc = ModelConfig(descriptor_dim=s["descriptor_dim"], hidden=s["hidden"], att_dim=s["att_dim"])
    if s["corrupt"] is not None:
        _require(s["corrupt"] in ad.RULES, f"unknown primitive {s['corrupt']!r}")
        ctx = ad.override_rule(s["corrupt"], ad.scaled_rule(s["corrupt"], 1.5))
    else:
        ctx = nullcontext()
    with ctx:
        report = gradcheck(seed=s["seed"], config=mc, directions=s["directions"])
    status = "PASS" if report.passed else "FAIL"
    print(f"gradcheck seed={s['seed']} max relative error {report.max_rel_error:.3e} "
          f"(tolerance {report.tolerance:.0e}): {status}")
    return 0 if report.passed else 1


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hoirefine", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file of parameter values (flags take precedence)")

    sp = sub.add_parser("synth", help="generate synthetic grasp scenes")
    common(sp)
    sp.add_argument("--count", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.add_argument("--vertex-sigma", dest="vertex_sigma", type=float, help="lattice noise sigma (mm)")
    sp.add_argument("--translation", type=float, help="rigid offset scale (mm)")
    sp.add_argument("--rotation", type=float, help="rigid rotation scale (deg)")
    sp.add_argument("--threads", type=int)
    sp.set_defaults(func=cmd_synth)

    def model_flags(sp):
        sp.add_argument("--gamma", type=float, help="attention edge threshold")
        sp.add_argument("--no-ec", dest="no_ec", action="store_const", const=True, help="drop common edges")
        sp.add_argument("--no-ea", dest="no_ea", action="store_const", const=True, help="drop attention edges")
        sp.add_argument("--descriptor-dim", dest="descriptor_dim", type=int)
        sp.add_argument("--hidden", type=int)
        sp.add_argument("--att-dim", dest="att_dim", type=int)

    sp = sub.add_parser("train", help="fit the refiner on a scene directory")
    common(sp)
    sp.add_argument("--scenes")
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--lr-drop-epoch", dest="lr_drop_epoch", type=int)
    sp.add_argument("--lr-drop-to", dest="lr_drop_to", type=float)
    sp.add_argument("--threads", type=int)
    sp.add_argument("--obj-samples", dest="obj_samples", type=int)
    sp.add_argument("--export-meshes", dest="export_meshes", action="store_const", const=True)
    model_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a scene directory")
    common(sp)
    sp.add_argument("--scenes")
    sp.add_argument("--checkpoint")
    sp.add_argument("--out")
    sp.add_argument("--threads", type=int)
    sp.add_argument("--obj-samples", dest="obj_samples", type=int)
    sp.add_argument("--export-meshes", dest="export_meshes", action="store_const", const=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference check of the full pipeline gradient")
    common(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--directions", type=int)
    sp.add_argument("--descriptor-dim", dest="descriptor_dim", type=int)
    sp.add_argument("--hidden", type=int)
    sp.add_argument("--att-dim", dest="att_dim", type=int)
    sp.add_argument("--corrupt", help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 3
    except (CheckpointError, MeshError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
