"""Command-line entry point: ``inpaintseg <group> <command> [flags]``.

Groups are ``data``, ``train``, ``eval``, ``mask`` and ``model``.  Every
command accepts ``--json`` for a machine-readable status line on stdout.
Exit codes: 0 success, 1 user error (bad flags, config or inputs),
2 runtime failure (diverged training, I/O problems).

Training settings resolve as flag > config file > profile default.  The
``INPAINTSEG_OUT`` environment variable sets the default output directory.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import evaluation, masking, model as model_mod, trainer
from .data import (DatasetManifest, EmptyInput, HeterogeneousInput, InvalidStride,
                   MissingLabelError, SampleSet)

log = logging.getLogger("inpaintseg")

EXIT_OK, EXIT_USER, EXIT_RUNTIME = 0, 1, 2

USER_ERRORS = (trainer.ConfigError, trainer.LabelDomainError, masking.InvalidSchedule,
               masking.InvalidMaskSpec, InvalidStride, EmptyInput, HeterogeneousInput,
               MissingLabelError, model_mod.InvalidClassCount,
               model_mod.IncompatibleCheckpoint)


class UsageError(Exception):
    """Bad flags, missing inputs or invalid values supplied by the user."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _default_out(name: str) -> Path:
    return Path(os.environ.get("INPAINTSEG_OUT", "runs")) / name


def _existing(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


def cmd_make_synthetic(args) -> dict:
    out = Path(args.out or _default_out("synthetic"))
    manifest = data_mod.write_synthetic_dataset(
        out, args.scenes, args.val_scenes, seed=args.seed,
        train_styles=tuple(args.styles), val_styles=args.val_styles and tuple(args.val_styles),
        canvas=args.canvas)
    return {"manifest": str(out / "manifest.tsv"), "records": len(manifest)}


def cmd_build_manifest(args) -> dict:
    root = _existing(args.root, "source directory")
    scan = data_mod.scan_city_osm if args.layout == "city-osm" else data_mod.scan_deepglobe
    sources = scan(root)
    tiling = args.tiling
    if tiling == "auto":
        # evaluation splits: whole DeepGlobe images, FiveCrop for CITY-OSM
        tiling = ("grid" if args.split == "train"
                  else "five" if args.layout == "city-osm" else "whole")
    manifest = data_mod.build_manifest(sources, args.crop, args.overlap, split=args.split,
                                       ground_sampling_distance=args.gsd, tiling=tiling)
    out = Path(args.out or root / "manifest.tsv")
    manifest.write(out)
    return {"manifest": str(out), "sources": len(sources), "records": len(manifest),
            "tiling": tiling}


def cmd_subset(args) -> dict:
    manifest = DatasetManifest.read(_existing(args.manifest, "manifest"))
    sub = data_mod.subset_halving(manifest, args.level, args.seed)
    out = Path(args.out or Path(args.manifest).with_name(f"manifest_{args.level}.tsv"))
    sub.write(out)
    return {"manifest": str(out), "sources": len(sub.sources), "records": len(sub)}


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

_STEP_FLAGS = {"lr": "lr", "batch_size": "batch_size",
               "optimizer": "optimizer"}


def _overrides(args, steps) -> dict[str, str]:
    """Flags turned into ``section.key`` overrides, which beat the config."""
    out: dict[str, str] = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        out[key.strip()] = value.strip()
    for flag, key in _STEP_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            for step in steps:
                out[f"{step}.{key}"] = str(value)
    for key in ("seed", "profile", "canvas"):
        value = getattr(args, key, None)
        if value is not None:
            out[f"pipeline.{key}"] = str(value)
    if getattr(args, "skip_guided", False):
        out["pipeline.skip_guided"] = "true"
    if getattr(args, "scratch", False):
        out["pipeline.scratch"] = "true"
    return out


def _load_split(manifest_path, split: str | None, root=None, labels=False) -> SampleSet:
    manifest = DatasetManifest.read(_existing(manifest_path, "manifest"))
    if split:
        manifest = manifest.filter(split=split)
    if not len(manifest):
        raise UsageError(f"no records with split {split!r} in {manifest_path}")
    root = Path(root) if root else Path(manifest_path).parent
    return data_mod.load_manifest(manifest, root, require_labels=labels)


def _load_val(args) -> SampleSet | None:
    """Validation samples, or None when the split is disabled or absent."""
    if not args.val_split:
        return None
    path = args.val_manifest or args.manifest
    manifest = DatasetManifest.read(_existing(path, "manifest"))
    if not len(manifest.filter(split=args.val_split)):
        if args.val_manifest:
            raise UsageError(f"no records with split {args.val_split!r} in {path}")
        log.warning("no %r split in %s: training without validation", args.val_split, path)
        return None
    return _load_split(path, args.val_split, args.root, labels=True)


def _resolve(args, steps) -> trainer.PipelineConfig:
    if args.manifest is None and not getattr(args, "dry_run", False):
        raise UsageError("--manifest is required")
    config = args.config and _existing(args.config, "config file")
    pipe = trainer.load_pipeline_config(config, _overrides(args, steps))
    if getattr(args, "epochs", None) is not None:
        # a shorter or longer run keeps the LR and mask schedules' proportions
        if args.epochs < 1:
            raise UsageError("--epochs must be at least 1")
        for step in steps:
            pipe.steps[step] = trainer.scale_epochs(pipe.steps[step], args.epochs)
    return pipe


def _norm_from(bundle) -> tuple | None:
    extra = bundle.extra or {}
    if "norm_mean" in extra:
        return np.asarray(extra["norm_mean"]), np.asarray(extra["norm_std"])
    return None


def _model_from(args, pipe: trainer.PipelineConfig, channels: int):
    def factory(k):
        return model_mod.ToyUNet(k, base_channels=pipe.base_channels)

    if args.init is None:
        import torch
        torch.manual_seed(pipe.seed)
        model = factory(pipe.num_classes)
        return (model_mod.to_inpainting_head(model, seed=pipe.seed) if channels == 3
                else model), None
    bundle = model_mod.read_checkpoint(_existing(args.init, "checkpoint"))
    # a step-3 model keeps the checkpoint's head until run_step3 replaces it
    width = channels if channels == 3 else bundle.head_channels
    return trainer._transfer(bundle, factory, width), bundle


def cmd_train_step(args) -> dict:
    tag = args.step
    pipe = _resolve(args, [tag])
    cfg = pipe.steps[tag]
    out = Path(args.out or _default_out(tag))
    train = _load_split(args.manifest, args.split, args.root, labels=tag != "step1")
    val = _load_val(args)
    if tag == "step3" and args.scratch and args.init:
        raise UsageError("--scratch and --init are mutually exclusive")
    if tag in ("step2", "step3") and args.init is None and not (tag == "step3" and args.scratch):
        raise UsageError(f"{tag} needs --init CHECKPOINT" +
                         (" or --scratch" if tag == "step3" else ""))
    model, bundle = _model_from(args, pipe, 1 if tag == "step3" else 3)
    norm = None
    if bundle is not None:
        norm = _norm_from(bundle) if args.keep_norm else None
        cfg = replace(cfg, init_from=bundle.digest)
    kw = dict(seed=pipe.seed, val=val, out_dir=out, norm=norm, resume=args.resume)
    if tag == "step1":
        res = trainer.run_step1(cfg, train, model, **kw)
    elif tag == "step2":
        res = trainer.run_step2(cfg, train, model, **kw)
    else:
        res = trainer.run_step3(cfg, train, model, pipe.num_classes,
                                config_digest=pipe.step3_digest(), **kw)
    status = {"checkpoint": str(res.checkpoint), "step": res.step_tag,
              "digest": res.bundle.digest}
    if res.metrics is not None:
        status["road_iou"] = res.metrics.iou_percent(1)
    return status


def cmd_pipeline(args) -> dict:
    pipe = _resolve(args, ["step1", "step2", "step3"])
    out = Path(args.out or _default_out("pipeline"))
    if args.dry_run:
        out.mkdir(parents=True, exist_ok=True)
        (out / "resolved.cfg").write_text(trainer.dump_pipeline_config(pipe))
        return {"config": str(out / "resolved.cfg")}
    labeled = _load_split(args.manifest, args.split, args.root, labels=True)
    unlabeled = (_load_split(args.unlabeled_manifest, None, args.root)
                 if args.unlabeled_manifest else SampleSet(labeled.images, None, labeled.ids))
    val = _load_val(args)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved.cfg").write_text(trainer.dump_pipeline_config(pipe))
    res = trainer.run_pipeline(pipe, unlabeled, labeled, val, out)
    status = {"lineage": str(out / "lineage.txt"), "steps": res.lineage.steps,
              "checkpoint": str(res.final.checkpoint)}
    if res.final.metrics is not None:
        status["road_iou"] = res.final.metrics.iou_percent(1)
    return status


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _evaluate_checkpoint(ckpt, manifest, split, root, threshold) -> evaluation.IoUReport:
    bundle = model_mod.read_checkpoint(ckpt)
    model = model_mod.load_model(ckpt)
    samples = _load_split(manifest, split, root, labels=True)
    norm = _norm_from(bundle)
    if norm is None:
        norm = data_mod.channel_stats(samples.images)
    return evaluation.evaluate_model(model, samples, *norm, threshold=threshold)


def cmd_evaluate(args) -> dict:
    ckpt = _existing(args.ckpt, "checkpoint")
    report = _evaluate_checkpoint(ckpt, args.manifest, args.split, args.root, args.threshold)
    out = Path(args.out or Path(ckpt).with_suffix(".iou.txt"))
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_text())
    return {"report": str(out), "road_iou": report.iou_percent(1),
            "undefined_classes": report.undefined_classes}


def _read_matrix_spec(path) -> list[dict]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.read(_existing(path, "matrix spec"))
    rows = []
    for name in parser.sections():
        row = dict(parser[name])
        for key in ("variant", "arm", "checkpoint", "manifest"):
            if key not in row:
                raise UsageError(f"[{name}] in {path} lacks {key!r}")
        if "seed" in row:
            row["seed"] = int(row["seed"])
        rows.append(row)
    if not rows:
        raise UsageError(f"{path} defines no rows")
    return rows


def cmd_matrix(args) -> dict:
    spec = _read_matrix_spec(args.spec)
    base = Path(args.spec).parent

    def rebase(p):
        return str(p if Path(p).is_absolute() else base / p)

    for row in spec:
        row["checkpoint"], row["manifest"] = rebase(row["checkpoint"]), rebase(row["manifest"])

    def evaluate(row):
        report = _evaluate_checkpoint(row["checkpoint"], row["manifest"], row.get("split"),
                                      None, args.threshold)
        row.setdefault("train_images", 0)
        return report

    matrix = evaluation.run_matrix(spec, evaluate)
    out = Path(args.out or Path(args.spec).with_name("matrix.tsv"))
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(matrix.to_table())
    missing = [row["checkpoint"] for row, r in zip(spec, matrix.rows) if r.status != "ok"]
    if missing:
        raise UsageError("missing checkpoints (table written to "
                         f"{out}): " + ", ".join(missing))
    return {"matrix": str(out), "rows": len(matrix)}


def cmd_report(args) -> dict:
    matrix = evaluation.ExperimentMatrix.from_table(
        _existing(args.matrix, "matrix table").read_text())
    schedule = _schedule(args.schedule)
    out = Path(args.out or Path(args.matrix).parent / "report")
    paths = evaluation.emit_report(matrix, out, schedule=schedule, canvas=args.canvas,
                                   seed=args.seed)
    return {k: str(v) for k, v in paths.items()}


# ---------------------------------------------------------------------------
# mask / model
# ---------------------------------------------------------------------------


def _schedule(path) -> masking.MaskSchedule:
    if path is None:
        return masking.DEFAULT_SCHEDULE
    return masking.MaskSchedule.from_text(_existing(path, "schedule file").read_text())


def cmd_mask_preview(args) -> dict:
    schedule = _schedule(args.schedule)
    out = Path(args.out or _default_out("masks") / "preview.png")
    out.parent.mkdir(parents=True, exist_ok=True)
    evaluation.mask_figure(schedule, out, canvas=args.canvas, epochs=tuple(args.epochs),
                           seed=args.seed)
    panels = [dict(zip(("epoch", "count", "size"), (e, *masking.schedule_at(schedule, e))))
              for e in args.epochs]
    return {"figure": str(out), "panels": panels}


def cmd_model_describe(args) -> dict:
    if args.ckpt:
        net = model_mod.load_model(_existing(args.ckpt, "checkpoint"))
    else:
        net = model_mod.ToyUNet(args.classes, base_channels=args.base_channels)
        if args.inpainting:
            net = model_mod.to_inpainting_head(net)
    text = model_mod.describe(net)
    if not args.json:
        print(text)
    return {"_printed": not args.json, "parameters": model_mod.parameter_count(net),
            "final_layer": net.final_layer_name,
            "head_channels": model_mod.head_channels(net),
            "tensors": {n: list(p.shape) for n, p in net.named_parameters()}}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--json", action="store_true", help="print status as one JSON object")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config with [pipeline] and [stepN] sections")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--manifest", help="training manifest")
    p.add_argument("--split", default="train", help="split of --manifest to train on")
    p.add_argument("--val-manifest", help="validation manifest (default: --manifest)")
    p.add_argument("--val-split", default="val",
                   help="validation split; empty string disables validation")
    p.add_argument("--root", help="directory image paths are relative to "
                                  "(default: the manifest's directory)")
    p.add_argument("--out", help="output directory (default: $INPAINTSEG_OUT/<command>)")
    p.add_argument("--profile", choices=("desk", "paper"), help="hyperparameter profile")
    p.add_argument("--canvas", type=int, help="image size the desk profile is scaled to")
    p.add_argument("--seed", type=int, help="global seed")
    p.add_argument("--epochs", type=int, help="epochs for every trained step")
    p.add_argument("--lr", type=float, help="initial learning rate for every trained step")
    p.add_argument("--batch-size", type=int, help="batch size for every trained step")
    p.add_argument("--optimizer", choices=("sgd_momentum", "adam"),
                   help="optimizer for every trained step")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="inpaintseg",
                     description="Inpainting pretraining for road segmentation.")
    groups = parser.add_subparsers(dest="group", required=True, parser_class=_Parser)

    # data
    data = groups.add_parser("data", help="dataset tools").add_subparsers(
        dest="command", required=True, parser_class=_Parser)
    p = data.add_parser("make-synthetic", help="write a synthetic road dataset")
    p.add_argument("--scenes", type=int, default=64, help="training scenes")
    p.add_argument("--val-scenes", type=int, default=0, help="validation scenes")
    p.add_argument("--seed", type=int, default=0, help="scene seed")
    p.add_argument("--canvas", type=int, default=96, help="scene size in pixels")
    p.add_argument("--styles", nargs="+", default=["A", "B", "C"], choices=sorted(data_mod.STYLES),
                   help="styles of training scenes")
    p.add_argument("--val-styles", nargs="+", choices=sorted(data_mod.STYLES),
                   help="styles of validation scenes (default: --styles)")
    p.add_argument("--out", help="output directory")
    _common(p)
    p.set_defaults(func=cmd_make_synthetic)

    p = data.add_parser("build-manifest", help="tile source images into a manifest")
    p.add_argument("--root", required=True, help="directory of source images")
    p.add_argument("--layout", choices=("deepglobe", "city-osm"), default="deepglobe",
                   help="file naming convention of --root")
    p.add_argument("--crop", type=int, default=512, help="crop size")
    p.add_argument("--overlap", type=int, default=256, help="overlap between crops")
    p.add_argument("--split", default="train", help="split written to every record")
    p.add_argument("--tiling", choices=("auto",) + data_mod.TILINGS, default="auto",
                   help="crop layout; auto uses the grid for train, whole images (deepglobe) "
                        "or FiveCrop (city-osm) otherwise")
    p.add_argument("--gsd", type=float, help="ground sampling distance in metres")
    p.add_argument("--out", help="manifest path (default: ROOT/manifest.tsv)")
    _common(p)
    p.set_defaults(func=cmd_build_manifest)

    p = data.add_parser("subset", help="keep a nested half or quarter of the sources")
    p.add_argument("--manifest", required=True, help="input manifest")
    p.add_argument("--level", choices=("full", "half", "quarter"), required=True,
                   help="fraction of source images to keep")
    p.add_argument("--seed", type=int, default=0, help="subset seed")
    p.add_argument("--out", help="output manifest (default: manifest_<level>.tsv)")
    _common(p)
    p.set_defaults(func=cmd_subset)

    # train
    train = groups.add_parser("train", help="training steps").add_subparsers(
        dest="command", required=True, parser_class=_Parser)
    for step, text in (("step1", "self-supervised inpainting"),
                       ("step2", "road-guided inpainting"),
                       ("step3", "segmentation fine-tuning")):
        p = train.add_parser(step, help=text)
        _train_flags(p)
        p.add_argument("--init", help="checkpoint to start from")
        p.add_argument("--resume", help="resume file written by an interrupted run")
        p.add_argument("--keep-norm", action="store_true",
                       help="reuse the normalisation stored in --init")
        if step == "step3":
            p.add_argument("--scratch", action="store_true",
                           help="train from a fresh initialisation (baseline)")
        _common(p)
        p.set_defaults(func=cmd_train_step, step=step)

    p = train.add_parser("pipeline", help="run steps 1-3 in sequence")
    _train_flags(p)
    p.add_argument("--unlabeled-manifest", help="extra images for step 1 "
                                                "(default: the training images)")
    p.add_argument("--skip-guided", action="store_true", help="go from step 1 to step 3")
    p.add_argument("--scratch", action="store_true", help="step 3 only, from scratch")
    p.add_argument("--dry-run", action="store_true",
                   help="validate and write the resolved config without training")
    _common(p)
    p.set_defaults(func=cmd_pipeline)

    # eval
    ev = groups.add_parser("eval", help="evaluation and reporting").add_subparsers(
        dest="command", required=True, parser_class=_Parser)
    p = ev.add_parser("evaluate", help="IoU of one checkpoint on a manifest")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--manifest", required=True, help="labelled manifest")
    p.add_argument("--split", help="only records of this split")
    p.add_argument("--root", help="image root (default: the manifest's directory)")
    p.add_argument("--threshold", type=float, default=0.5, help="binary decision threshold")
    p.add_argument("--out", help="report file (default: <ckpt>.iou.txt)")
    _common(p)
    p.set_defaults(func=cmd_evaluate)

    p = ev.add_parser("matrix", help="evaluate every row of a matrix spec")
    p.add_argument("--spec", required=True,
                   help="INI file, one section per row: variant, arm, checkpoint, manifest, "
                        "optional domain, split, seed, train_images")
    p.add_argument("--threshold", type=float, default=0.5, help="binary decision threshold")
    p.add_argument("--out", help="table path (default: matrix.tsv beside the spec)")
    _common(p)
    p.set_defaults(func=cmd_matrix)

    p = ev.add_parser("report", help="plots and tables from a matrix table")
    p.add_argument("--matrix", required=True, help="table written by 'eval matrix'")
    p.add_argument("--schedule", help="mask schedule file for the mask figure")
    p.add_argument("--canvas", type=int, default=512, help="mask figure panel size")
    p.add_argument("--seed", type=int, default=0, help="mask figure seed")
    p.add_argument("--out", help="output directory")
    _common(p)
    p.set_defaults(func=cmd_report)

    # mask
    mask = groups.add_parser("mask", help="mask schedule tools").add_subparsers(
        dest="command", required=True, parser_class=_Parser)
    p = mask.add_parser("preview", help="render masks at chosen epochs side by side")
    p.add_argument("--epochs", type=int, nargs="+", default=[10, 30, 50],
                   help="epochs to render")
    p.add_argument("--seed", type=int, default=0, help="mask seed")
    p.add_argument("--canvas", type=int, default=512, help="panel size in pixels")
    p.add_argument("--schedule", help="schedule file (default: the built-in table)")
    p.add_argument("--out", help="PNG path")
    _common(p)
    p.set_defaults(func=cmd_mask_preview)

    # model
    mdl = groups.add_parser("model", help="model inspection").add_subparsers(
        dest="command", required=True, parser_class=_Parser)
    p = mdl.add_parser("describe", help="parameter names, shapes and head configuration")
    p.add_argument("--ckpt", help="describe the model stored in a checkpoint")
    p.add_argument("--classes", type=int, default=1, help="output channels of a fresh model")
    p.add_argument("--base-channels", type=int, default=16, help="width of a fresh model")
    p.add_argument("--inpainting", action="store_true", help="show the RGB inpainting head")
    _common(p)
    p.set_defaults(func=cmd_model_describe)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    want_json = "--json" in argv
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        status = args.func(args)
        code, payload = EXIT_OK, {"status": "ok", **status}
    except UsageError as exc:
        code, payload = EXIT_USER, {"status": "error", "error": str(exc)}
    except USER_ERRORS as exc:
        code, payload = EXIT_USER, {"status": "error", "error": f"{type(exc).__name__}: {exc}"}
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        code, payload = EXIT_RUNTIME, {"status": "error",
                                       "error": f"{type(exc).__name__}: {exc}"}
    payload["exit_code"] = code
    if want_json:
        payload.pop("_printed", None)
        print(json.dumps(payload, default=str))
    elif code != EXIT_OK:
        print(f"error: {payload['error']}", file=sys.stderr)
    elif not payload.pop("_printed", False):
        for key, value in payload.items():
            if key not in ("status", "exit_code"):
                print(f"{key}: {value}")
    return code


if __name__ == "__main__":
    sys.exit(main())
