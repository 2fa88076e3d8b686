"""Command-line entry point: ``dhhqa <subcommand> ...``.

Failures print one JSON line ``{"error": ..., "module": ..., "message": ...}``
on stderr and exit non-zero. Output files carry no timestamps, so repeated
runs with the same inputs and seed produce identical bytes.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import nn
from .config import RunConfig, dump_json, load_config, save_snapshot
from .distort import DistortionKind, DistortionSpec, apply_distortion, build_corpus, read_manifest
from .mesh import load_mesh, mesh_to_pointcloud, save_mesh
from .model import VitConfig, init_params
from .pcq import Direction, p2plane_mse, p2point_mse, psnr_yuv
from .render import RenderConfig, crop_patches, render_front, save_patch, save_projection
from .stats import MetricsReport, aggregate, make_folds
from .synthetic import synthetic_heads
from .training import (
    TrainConfig,
    evaluate_rows,
    predict,
    read_predictions,
    train,
    write_epoch_log,
    write_predictions,
)

log = logging.getLogger("dhhqa")

EXIT_USAGE = 2
EXIT_FAILURE = 1


class CliError(Exception):
    def __init__(self, module: str, message: str):
        super().__init__(message)
        self.module = module


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("usage", "cli", message)
        sys.exit(EXIT_USAGE)


def _emit_error(kind: str, module: str, message: str):
    line = json.dumps({"error": kind, "module": module, "message": " ".join(str(message).split())})
    print(line, file=sys.stderr)


def _json_out(obj):
    print(json.dumps(obj, sort_keys=True))


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise CliError("config", f"--set expects key=value, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _config(args, extra: dict | None = None) -> RunConfig:
    overrides = _overrides(getattr(args, "set", None))
    overrides.update({k: v for k, v in (extra or {}).items() if v is not None})
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    try:
        return load_config(getattr(args, "config", None), overrides)
    except (ValueError, OSError) as exc:
        raise CliError("config", str(exc)) from exc


def _render_overrides(args) -> dict:
    return {
        "render.resolution": getattr(args, "resolution", None),
        "render.background_rgb": list(args.bg) if getattr(args, "bg", None) else None,
        "render.fit_margin": getattr(args, "margin", None),
        "render.lighting": getattr(args, "lighting", None),
        "render.light_direction": list(args.light) if getattr(args, "light", None) else None,
    }


# ------------------------------------------------------------------ commands

def cmd_render(args):
    cfg = _config(args, {**_render_overrides(args), "train.patch_size": args.patch_size})
    mesh = _load_mesh(args.mesh)
    image = render_front(mesh, cfg.render)
    out = save_projection(image, args.out)
    result = {"projection": str(out), "width": image.width, "height": image.height,
              "foreground": image.foreground_fraction}
    if args.crops:
        patch_dir = Path(args.patch_dir or Path(args.out).with_suffix(""))
        patches = crop_patches(image, args.crops, cfg.train.patch_size, cfg.seed, cfg.train.min_foreground)
        result["patches"] = [
            {"path": str(save_patch(p, patch_dir / f"patch_{i}.png")), "origin": list(p.crop_origin)}
            for i, p in enumerate(patches)]
    _json_out(result)


def cmd_distort(args):
    cfg = _config(args)
    mesh = _load_mesh(args.mesh)
    try:
        spec = DistortionSpec(DistortionKind.parse(args.kind), args.level, cfg.seed)
        out = apply_distortion(mesh, spec)
    except ValueError as exc:
        raise CliError("distort", str(exc)) from exc
    path = save_mesh(out, args.out)
    _json_out({"mesh": str(path), "kind": spec.kind.name, "level": spec.level, "seed": spec.seed,
               "faces": int(len(out.faces)), "vertices": int(len(out.vertices))})


def cmd_dataset(args):
    cfg = _config(args, _render_overrides(args))
    if (args.meshes is None) == (args.synthetic is None):
        raise CliError("cli", "give exactly one of --meshes DIR or --synthetic N")
    if args.meshes is not None:
        paths = sorted(Path(args.meshes).glob("*.obj"))
        if not paths:
            raise CliError("mesh_core", f"no .obj files in {args.meshes}")
        meshes = [_load_mesh(p) for p in paths]
        meshes = [m.with_(name=p.stem) for m, p in zip(meshes, paths)]
    else:
        c = cfg.corpus
        meshes = synthetic_heads(args.synthetic, seed=cfg.seed, n_lat=c.n_lat, n_lon=c.n_lon,
                                 texture_size=c.texture_size, skin_detail=c.skin_detail)
    try:
        records = build_corpus(meshes, args.out, seed=cfg.seed, render_cfg=cfg.render)
    except Exception as exc:
        raise CliError("distort", str(exc)) from exc
    save_snapshot(cfg, args.out)
    _json_out({"manifest": str(Path(args.out) / "manifest.csv"), "records": len(records),
               "contents": len(meshes)})


def cmd_frmetric(args):
    cfg = _config(args)
    n = args.samples or cfg.corpus.point_samples
    # one seed for both: identical meshes give identical clouds
    ref = mesh_to_pointcloud(_load_mesh(args.ref), n, seed=cfg.seed)
    dist = mesh_to_pointcloud(_load_mesh(args.dist), n, seed=cfg.seed)
    direction = Direction(args.direction)
    scores = [p2point_mse(ref, dist, direction), p2plane_mse(ref, dist, direction),
              psnr_yuv(ref, dist, direction)]
    result = {"samples": n, "scores": [s.to_dict() for s in scores]}
    if args.out:
        dump_json(result, args.out)
    _json_out(result)


def cmd_train(args):
    cfg = _config(args, {
        "train.epochs": args.epochs, "train.learning_rate": args.lr,
        "train.batch_size": args.batch_size, "model.loss_lambda": args.lam,
        "model.multitask_enabled": False if args.no_multitask else None,
    })
    rows = _read_manifest(args.manifest)
    contents = sorted({r.content_id for r in rows})
    try:
        folds = make_folds(contents, cfg.folds, cfg.seed)
    except ValueError as exc:
        raise CliError("stats", str(exc)) from exc
    if args.fold == "all":
        chosen = folds
    else:
        try:
            chosen = [folds[int(args.fold)]]
        except (ValueError, IndexError):
            raise CliError("cli", f"--fold must be 'all' or 0..{len(folds) - 1}, got {args.fold!r}") from None
    out = Path(args.out)
    save_snapshot(cfg, out)
    reports = []
    for split in chosen:
        report = _train_fold(rows, split, cfg, out / f"fold{split.fold_index}")
        reports.append(report)
    summary = {"folds": [r.to_dict() for r in reports], "mean": aggregate(reports).to_dict(),
               "multitask": cfg.model.multitask_enabled, "lambda": cfg.model.effective_lambda}
    dump_json(summary, out / "summary.json")
    _json_out(summary)


def _train_fold(rows, split, cfg: RunConfig, out: Path) -> MetricsReport:
    tcfg = cfg.train_config()
    try:
        result = train(rows, split, cfg.model, tcfg)
    except (ValueError, FloatingPointError) as exc:
        raise CliError("qa_model", f"fold {split.fold_index}: {exc}") from exc
    meta = {"vit": cfg.model.to_dict(), "render": _render_dict(cfg.render),
            "patch_size": tcfg.patch_size, "min_foreground": tcfg.min_foreground,
            "eval_crops": tcfg.eval_crops, "mos_scale": tcfg.mos_scale, "fold": split.fold_index,
            "seed": cfg.seed}
    nn.save_checkpoint(out / "model.ckpt", result.params, meta)
    write_epoch_log(result.log, out / "epoch_log.csv")
    write_predictions(result.test_predictions, out / "predictions.csv")
    report = evaluate_rows(result.test_predictions, split.fold_index,
                           cfg.model.multitask_enabled, cfg.eval.logistic)
    dump_json(report.to_dict(), out / "metrics.json")
    return report


def _render_dict(rc: RenderConfig) -> dict:
    return {"resolution": rc.resolution, "background_rgb": list(rc.background_rgb),
            "fit_margin": rc.fit_margin, "lighting": rc.lighting,
            "light_direction": list(rc.light_direction)}


def cmd_eval(args):
    cfg = _config(args)
    try:
        rows = read_predictions(args.predictions)
        multitask = not args.no_acc and all(r.get("pred_kind", "") != "" for r in rows)
        report = evaluate_rows(rows, "mean", multitask, args.logistic or cfg.eval.logistic)
    except (ValueError, KeyError) as exc:
        raise CliError("stats", str(exc)) from exc
    if args.out:
        dump_json(report.to_dict(), args.out)
    _json_out(report.to_dict())


def cmd_predict(args):
    try:
        params, meta = nn.load_checkpoint(args.ckpt)
        vit = VitConfig(**meta["vit"])
        rcfg = meta.get("render", {})
        render_cfg = RenderConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in rcfg.items()})
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CliError("nn_core", f"cannot load checkpoint: {exc}") from exc
    if (args.mesh is None) == (args.projection is None):
        raise CliError("cli", "give exactly one of --mesh or --projection")
    source = args.mesh or args.projection
    try:
        pred = predict(source, params, vit, k_crops=args.crops or meta.get("eval_crops", 5),
                       seed=args.seed or 0, patch_size=meta.get("patch_size", 224),
                       min_foreground=meta.get("min_foreground", 0.5), render_cfg=render_cfg,
                       mos_scale=meta.get("mos_scale", 100.0))
    except (ValueError, OSError) as exc:
        raise CliError("qa_model", str(exc)) from exc
    out = pred.to_dict()
    out["predicted_kind"] = DistortionKind(pred.predicted_class).name \
        if pred.predicted_class < len(DistortionKind) else None
    _json_out(out)


REPORT_COLUMNS = ["SRCC", "PLCC", "KRCC", "RMSE", "ACC"]


def cmd_report(args):
    runs = []
    for path in args.runs:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError("cli", f"cannot read run {path}: {exc}") from exc
        block = data.get("mean", data)
        try:
            report = MetricsReport.from_dict(block)
        except (ValueError, TypeError) as exc:
            raise CliError("stats", f"{path}: {exc}") from exc
        runs.append((data.get("name") or Path(path).stem, report))
    names = args.names or [n for n, _ in runs]
    if len(names) != len(runs):
        raise CliError("cli", "--names must give one label per run")
    show_acc = any(r.acc is not None for _, r in runs)
    cols = REPORT_COLUMNS if show_acc else REPORT_COLUMNS[:4]
    headers = ["Method"] + [c + ("↓" if c == "RMSE" else "↑") for c in cols]
    table = []
    for name, (_, r) in zip(names, runs):
        vals = [r.srcc, r.plcc, r.krcc, r.rmse] + ([r.acc] if show_acc else [])
        table.append([name] + ["-" if v is None else f"{v:.4f}" for v in vals])
    widths = [max(len(row[i]) for row in [headers] + table) for i in range(len(headers))]
    lines = ["  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(row, widths)))
             for row in [headers] + table]
    text = "\n".join(lines)
    print(text)
    if args.csv:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method"] + [c.lower() for c in cols])
        for row in table:
            w.writerow(row)
        Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
        Path(args.csv).write_text(buf.getvalue())


# ------------------------------------------------------------------ helpers

def _load_mesh(path):
    try:
        return load_mesh(path)
    except (OSError, ValueError) as exc:
        raise CliError("mesh_core", str(exc)) from exc


def _read_manifest(path):
    try:
        return read_manifest(path)
    except (OSError, ValueError) as exc:
        raise CliError("distort", f"cannot read manifest: {exc}") from exc


def _add_common(p, config=True):
    p.add_argument("--seed", type=int, default=None, help="master seed for all randomness (default 0)")
    if config:
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry, e.g. train.epochs=3 (repeatable)")


def _add_render(p):
    p.add_argument("--resolution", type=int, help="projection width and height in pixels")
    p.add_argument("--bg", type=int, nargs=3, metavar=("R", "G", "B"), help="background colour")
    p.add_argument("--margin", type=float, help="fraction of the half-extent left empty")
    p.add_argument("--lighting", choices=["unlit", "lambertian"], help="shading mode")
    p.add_argument("--light", type=float, nargs=3, metavar=("X", "Y", "Z"), help="light direction")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dhhqa", description="Blind quality scoring of textured head meshes.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("render", help="front projection of a mesh, optionally with random crops")
    p.add_argument("--mesh", required=True, help="input .obj")
    p.add_argument("--out", required=True, help="output projection PNG")
    _add_render(p)
    p.add_argument("--patch-size", type=int, help="crop size in pixels")
    p.add_argument("--crops", type=int, default=0, help="number of random crops to save")
    p.add_argument("--patch-dir", help="directory for crops (default: next to --out)")
    _add_common(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("distort", help="apply one distortion to a mesh")
    p.add_argument("--mesh", required=True, help="input .obj")
    p.add_argument("--kind", required=True, help="distortion name or class index")
    p.add_argument("--level", required=True, type=int, choices=[1, 2, 3, 4], help="severity level")
    p.add_argument("--out", required=True, help="output .obj (texture and material written alongside)")
    _add_common(p)
    p.set_defaults(func=cmd_distort)

    p = sub.add_parser("dataset", help="build a labelled corpus of distorted projections")
    p.add_argument("--meshes", help="directory of source .obj files")
    p.add_argument("--synthetic", type=int, help="generate N procedural heads instead")
    p.add_argument("--out", required=True, help="corpus directory")
    _add_render(p)
    _add_common(p)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("frmetric", help="full-reference point-cloud metrics between two meshes")
    p.add_argument("--ref", required=True, help="reference .obj")
    p.add_argument("--dist", required=True, help="distorted .obj")
    p.add_argument("--samples", type=int, help="points sampled per mesh")
    p.add_argument("--direction", default="Symmetric", choices=[d.value for d in Direction],
                   help="which nearest-neighbour direction to score (default: the worse of both)")
    p.add_argument("--out", help="also write the scores to this JSON file")
    _add_common(p)
    p.set_defaults(func=cmd_frmetric)

    p = sub.add_parser("train", help="train and test on content-disjoint folds")
    p.add_argument("--manifest", required=True, help="corpus manifest CSV")
    p.add_argument("--fold", default="all", help="fold index or 'all'")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=int, help="training epochs")
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--batch-size", type=int, help="rows per batch")
    p.add_argument("--lambda", dest="lam", type=float, help="classification loss weight")
    p.add_argument("--no-multitask", action="store_true", help="regression only (lambda forced to 0)")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics for a predictions CSV")
    p.add_argument("--predictions", required=True, help="CSV with content_id,kind,level,pred_mos,pred_kind,mos,true_kind")
    p.add_argument("--logistic", action="store_true", help="logistic remap before PLCC/RMSE")
    p.add_argument("--no-acc", action="store_true", help="skip classification accuracy")
    p.add_argument("--out", help="also write the report JSON here")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="score one mesh or projection with a checkpoint")
    p.add_argument("--ckpt", required=True, help="checkpoint written by train")
    p.add_argument("--mesh", help="input .obj")
    p.add_argument("--projection", help="input projection PNG")
    p.add_argument("--crops", type=int, help="crops averaged per prediction")
    _add_common(p, config=False)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="comparison table of run metrics")
    p.add_argument("--runs", nargs="+", required=True, help="metrics.json or summary.json files")
    p.add_argument("--names", nargs="+", help="row labels (default: file stems)")
    p.add_argument("--csv", help="also write the table as CSV")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, or a usage error already reported
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CliError as exc:
        _emit_error("failed", exc.module, str(exc))
        return EXIT_FAILURE
    except (ValueError, OSError, FloatingPointError) as exc:
        _emit_error(type(exc).__name__, args.command, str(exc))
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":
    sys.exit(main())
