"""The three training steps and the pipeline that chains them.

Step 1 pretrains on unlabeled images by inpainting scheduled cluster masks,
step 2 repeats the task with the losses restricted to road pixels, and step 3
fine-tunes for segmentation after the head is restored.  A baseline is step 3
alone from a fresh initialisation.
"""

from __future__ import annotations

import configparser
import io
import hashlib
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import losses, masking
from .data.augment import apply_transform, channel_stats, normalize, sample_transform
from .data.loading import MissingLabelError, SampleSet
from .evaluation import IoUReport, evaluate_model
from .model import (RGB_CHANNELS, CheckpointBundle, ToyUNet, bundle_from_model, head_channels,
                    load_checkpoint, to_inpainting_head, to_segmentation_head,
                    write_bundle)

log = logging.getLogger(__name__)

STEPS = ("inpaint", "guided_inpaint", "segmentation")
STEP_TAG = dict(zip(STEPS, ("step1", "step2", "step3")))
PAPER_CANVAS = 512


class TrainingDiverged(RuntimeError):
    def __init__(self, step: str, epoch: int, batch: int, mask_seed):
        super().__init__(f"non-finite loss in {step} at epoch {epoch}, batch {batch} "
                         f"(mask seed {mask_seed})")
        self.epoch, self.batch, self.mask_seed = epoch, batch, mask_seed


class LabelDomainError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StepConfig:
    step: str
    epochs: int
    lr: float
    lr_milestones: tuple[int, ...] = ()
    lr_gamma: float = 0.1
    optimizer: str = "sgd_momentum"
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 32
    loss_weights: losses.LossWeights = losses.LossWeights()
    mask_schedule: masking.MaskSchedule | None = None
    init_from: str | None = None
    seg_loss: str = "cross_entropy"
    grad_clip: float | None = None
    augment: bool = True
    threshold: float = 0.5

    def __post_init__(self):
        if self.step not in STEPS:
            raise ConfigError(f"step must be one of {STEPS}, got {self.step!r}")
        if self.epochs <= 0:
            raise ConfigError("epochs must be positive")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        ms = list(self.lr_milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError("lr_milestones must be strictly increasing")
        if ms and ms[-1] >= self.epochs:
            raise ConfigError("lr_milestones must lie below epochs")
        if self.optimizer not in ("sgd_momentum", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.step != "segmentation" and self.mask_schedule is None:
            raise ConfigError(f"{self.step} needs a mask schedule")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_gamma ** sum(m <= epoch for m in self.lr_milestones)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_milestones"] = list(self.lr_milestones)
        d["loss_weights"] = [self.loss_weights.w_id, self.loss_weights.w_fill]
        d["mask_schedule"] = (None if self.mask_schedule is None else
                              [[m.epoch, m.cluster_count, m.cluster_size]
                               for m in self.mask_schedule.milestones])
        return d

    def digest(self, exclude=()) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in exclude}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------


def paper_configs(segmentation: str = "spin") -> dict[str, StepConfig]:
    """Hyperparameters of the full-scale runs.

    ``segmentation='emek'`` switches step 3 to Adam at lr 1e-3 with decay at
    epochs 10, 20 and 30; its epoch count is not published, so 40 is used.
    """
    sched = masking.DEFAULT_SCHEDULE
    step1 = StepConfig("inpaint", 120, 0.01, (50, 90, 110), batch_size=32,
                       mask_schedule=sched)
    # step 2 reuses step 1's batch size and SGD settings
    step2 = StepConfig("guided_inpaint", 40, 0.001, (10, 20, 30), batch_size=32,
                       mask_schedule=masking.MaskSchedule((replace(sched.final, epoch=0),)))
    if segmentation == "spin":
        step3 = StepConfig("segmentation", 120, 0.01, (50, 90, 110), batch_size=32)
    elif segmentation == "emek":
        step3 = StepConfig("segmentation", 40, 0.001, (10, 20, 30), optimizer="adam",
                           weight_decay=0.0, batch_size=32)
    else:
        raise ConfigError(f"unknown segmentation profile {segmentation!r}")
    return {"step1": step1, "step2": step2, "step3": step3}


def scale_epochs(config: StepConfig, epochs: int) -> StepConfig:
    """Shorten a step: milestones scale by epochs/old_epochs, rounded down,
    at least 1; the mask schedule's epochs scale the same way."""
    factor = epochs / config.epochs
    ms = sorted({max(1, math.floor(m * factor)) for m in config.lr_milestones})
    ms = [m for m in ms if m < epochs]
    sched = config.mask_schedule
    if sched is not None:
        sched = sched.rescaled(epoch_factor=factor)
    return replace(config, epochs=epochs, lr_milestones=tuple(ms), mask_schedule=sched)


def desk_configs(canvas: int = 96, batch_size: int = 8,
                 segmentation: str = "spin") -> dict[str, StepConfig]:
    """CPU-sized profile: a tenth of the epochs (12/4/12), cluster sizes scaled
    to the canvas so the masked fraction stays near its full-scale value."""
    paper = paper_configs(segmentation)
    out = {}
    for tag, epochs in (("step1", 12), ("step2", 4), ("step3", 12)):
        cfg = scale_epochs(paper[tag], epochs)
        if cfg.mask_schedule is not None:
            cfg = replace(cfg, mask_schedule=cfg.mask_schedule.rescaled(
                size_factor=canvas / PAPER_CANVAS))
        out[tag] = replace(cfg, batch_size=batch_size)
    return out


PROFILES = {"paper": paper_configs, "desk": desk_configs}


# ---------------------------------------------------------------------------
# Logging
# ---------------------------------------------------------------------------

LOG_HEADER = ("step", "epoch", "l_id", "l_fill", "l_total", "masked_fraction",
              "lr", "kind", "val")


@dataclass
class TrainingLog:
    """Delimited text log: one row per optimizer step plus epoch summaries."""

    rows: list[tuple] = field(default_factory=list)
    path: Path | None = None

    def add(self, step, epoch, l_id, l_fill, l_total, masked_fraction, lr,
            kind="batch", val=None):
        row = (step, epoch, l_id, l_fill, l_total, masked_fraction, lr, kind, val)
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(self._fmt(row) + "\n")

    @staticmethod
    def _fmt(row) -> str:
        def f(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return repr(v)
            return str(v)
        return "\t".join(f(v) for v in row)

    def start(self, path: Path | None):
        self.path = path
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text("\t".join(LOG_HEADER) + "\n")

    def to_text(self) -> str:
        return "\n".join(["\t".join(LOG_HEADER)] + [self._fmt(r) for r in self.rows]) + "\n"

    def epoch_rows(self):
        return [r for r in self.rows if r[7] == "epoch"]

    @staticmethod
    def read(path) -> list[dict]:
        lines = Path(path).read_text().splitlines()
        header = lines[0].split("\t")
        return [dict(zip(header, line.split("\t"))) for line in lines[1:] if line]


# ---------------------------------------------------------------------------
# Core loop
# ---------------------------------------------------------------------------


@dataclass
class StepResult:
    step_tag: str
    model: nn.Module
    bundle: CheckpointBundle
    log: TrainingLog
    norm: tuple[np.ndarray, np.ndarray]
    checkpoint: Path | None = None
    val_history: list[float] = field(default_factory=list)
    metrics: IoUReport | None = None


def set_deterministic(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


def _optimizer(model: nn.Module, cfg: StepConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    return torch.optim.SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum,
                           weight_decay=cfg.weight_decay)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for b, start in enumerate(range(0, n, batch_size)):
        yield b, order[start:start + batch_size]


def _prepare(samples: SampleSet, idx, seed: int, epoch: int, cfg: StepConfig, norm):
    """Augment (seeded per sample and epoch) then normalise; returns NCHW
    images and the matching labels."""
    imgs, labs = [], []
    for i in idx:
        img = samples.images[i]
        lab = None if samples.labels is None else samples.labels[i]
        if cfg.augment:
            t = sample_transform(masking.derive_seed(seed, epoch, int(i), 1))
            img = apply_transform(img, t)
            lab = None if lab is None else apply_transform(lab, t)
        imgs.append(img)
        labs.append(lab)
    x = torch.from_numpy(normalize(np.stack(imgs), *norm)).permute(0, 3, 1, 2).contiguous()
    y = None if labs[0] is None else torch.from_numpy(np.stack(labs).astype(np.int64))
    return x, y


def _segmentation_loss(logits: torch.Tensor, target: torch.Tensor, cfg: StepConfig):
    k = logits.shape[1]
    if cfg.seg_loss != "cross_entropy":
        raise ConfigError(f"unknown segmentation loss {cfg.seg_loss!r}")
    if k == 1:
        return F.binary_cross_entropy_with_logits(logits[:, 0], target.to(logits.dtype))
    return F.cross_entropy(logits, target)


@torch.no_grad()
def _inpaint_val_loss(model, val: SampleSet, cfg: StepConfig, epoch: int, seed: int,
                      norm, guided: bool) -> float:
    """Reconstruction loss on a held-out batch with fixed mask seeds."""
    n = min(len(val), cfg.batch_size)
    x = torch.from_numpy(normalize(val.images[:n], *norm)).permute(0, 3, 1, 2)
    h, w = x.shape[-2:]
    count, size = masking.schedule_at(cfg.mask_schedule, epoch)
    m = torch.from_numpy(masking.mask_batch(
        (h, w), count, min(size, h, w), [masking.derive_seed(seed, 10**6, i) for i in range(n)]))
    was = model.training
    model.eval()
    out = model(x * m.unsqueeze(1).to(x.dtype))
    model.train(was)
    if guided and val.labels is not None:
        road = torch.from_numpy((val.labels[:n] == 1).astype(np.uint8))
        return float(losses.total_guided_loss(out, x, m, road, cfg.loss_weights).l_total)
    return float(losses.total_inpaint_loss(out, x, m, cfg.loss_weights).l_total)


def train_step(cfg: StepConfig, model: nn.Module, samples: SampleSet, *, seed: int = 0,
               val: SampleSet | None = None, norm=None, out_dir: str | Path | None = None,
               resume: str | Path | None = None, stop_after_epoch: int | None = None,
               config_digest: str | None = None) -> StepResult:
    """Run one training step on ``model`` (modified in place).

    ``norm`` is the (mean, std) pair used for normalisation; it is computed
    from ``samples`` when omitted.  With ``out_dir`` set, the log, a
    checkpoint at every LR milestone and at the end, and a resumable state
    file are written there.  ``stop_after_epoch`` ends the run early (after
    saving state), which together with ``resume`` lets a step be split.
    """
    tag = STEP_TAG[cfg.step]
    set_deterministic(seed)
    if norm is None:
        mean, std = channel_stats(samples.images)
        norm = (mean, np.maximum(std, 1e-3))
    norm = (np.asarray(norm[0], dtype=np.float64), np.asarray(norm[1], dtype=np.float64))
    if cfg.step != "inpaint" and samples.labels is None:
        raise MissingLabelError(f"{cfg.step} needs labelled samples")
    k = head_channels(model)
    if cfg.step == "segmentation":
        n_cls = max(k, 2)
        if samples.labels.max(initial=0) >= n_cls:
            raise LabelDomainError(
                f"label value {samples.labels.max()} outside {n_cls} classes")
    elif k != RGB_CHANNELS:
        raise ConfigError(f"{cfg.step} needs a 3-channel head, model has {k}")

    out = None if out_dir is None else Path(out_dir)
    opt = _optimizer(model, cfg)
    sched = torch.optim.lr_scheduler.MultiStepLR(opt, list(cfg.lr_milestones), cfg.lr_gamma)
    tlog = TrainingLog()
    start_epoch, gstep = 0, 0
    val_history: list[float] = []
    if resume is not None:
        state = torch.load(resume, weights_only=False)
        model.load_state_dict(state["model"])
        opt.load_state_dict(state["optimizer"])
        sched.load_state_dict(state["scheduler"])
        start_epoch, gstep = state["epoch"] + 1, state["global_step"]
        tlog.rows = [tuple(r) for r in state["log"]]
        val_history = list(state["val_history"])
    if out is not None:
        restored, tlog.rows = tlog.rows, []
        tlog.start(out / f"{tag}_log.tsv")
        for r in restored:
            tlog.add(*r)

    cfg_digest = config_digest or cfg.digest()
    warned_no_road = False
    h, w = samples.images.shape[1:3]
    model.train()
    for epoch in range(start_epoch, cfg.epochs):
        lr = opt.param_groups[0]["lr"]
        rng = np.random.default_rng(masking.derive_seed(seed, epoch, 0, 2))
        if cfg.step != "segmentation":
            count, size = masking.schedule_at(cfg.mask_schedule, epoch)
            size = min(size, h, w)
        ep_loss, ep_n = 0.0, 0
        for b, idx in _batches(len(samples), cfg.batch_size, rng):
            x, y = _prepare(samples, idx, seed, epoch, cfg, norm)
            mfrac = None
            if cfg.step == "segmentation":
                loss = _segmentation_loss(model(x), y, cfg)
                l_id = l_fill = None
                skip = False
            else:
                seeds = [masking.derive_seed(seed, epoch, b, j) for j in range(len(idx))]
                m_np = masking.mask_batch((h, w), count, size, seeds)
                mfrac = float(np.mean(m_np == 0))
                m = torch.from_numpy(m_np)
                o = model(x * m.unsqueeze(1).to(x.dtype))
                if cfg.step == "inpaint":
                    rep = losses.total_inpaint_loss(o, x, m, cfg.loss_weights)
                    skip = False
                else:
                    road = (y == 1).to(torch.uint8)
                    rep = losses.total_guided_loss(o, x, m, road, cfg.loss_weights)
                    skip = rep.road_pixel_count == 0
                    if skip and not warned_no_road:
                        warnings.warn("batch without road pixels: guided loss is zero, "
                                      "optimizer step skipped", stacklevel=2)
                        warned_no_road = True
                loss = rep.l_total
                l_id, l_fill = rep.l_id.item(), rep.l_fill.item()
            if not torch.isfinite(loss):
                raise TrainingDiverged(cfg.step, epoch, b,
                                       None if mfrac is None else [seed, epoch, b])
            if not skip:
                opt.zero_grad(set_to_none=True)
                loss.backward()
                if cfg.grad_clip:
                    nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                opt.step()
            gstep += 1
            loss_value = loss.item()
            ep_loss += loss_value * len(idx)
            ep_n += len(idx)
            tlog.add(gstep, epoch, l_id, l_fill, loss_value, mfrac, lr)

        val_metric = None
        if val is not None and len(val):
            if cfg.step == "segmentation":
                val_metric = evaluate_model(model, val, *norm, threshold=cfg.threshold).iou_percent(1)
            else:
                val_metric = _inpaint_val_loss(model, val, cfg, epoch, seed, norm,
                                               cfg.step == "guided_inpaint")
            val_history.append(val_metric)
        tlog.add(gstep, epoch, None, None, ep_loss / max(ep_n, 1), None, lr, "epoch", val_metric)
        log.info("%s epoch %d loss %.5f val %s", tag, epoch, ep_loss / max(ep_n, 1), val_metric)
        sched.step()

        if out is not None:
            torch.save({"model": model.state_dict(), "optimizer": opt.state_dict(),
                        "scheduler": sched.state_dict(), "epoch": epoch,
                        "global_step": gstep, "log": tlog.rows, "val_history": val_history},
                       out / f"{tag}_state.pt")
            if epoch + 1 in cfg.lr_milestones:
                _save(model, out / f"{tag}_epoch{epoch + 1:03d}.ckpt", tag, cfg_digest, norm)
        if stop_after_epoch is not None and epoch >= stop_after_epoch:
            break

    bundle = bundle_from_model(model, tag, cfg_digest, _norm_extra(model, norm))
    ckpt = None
    if out is not None:
        ckpt = out / f"{tag}_final.ckpt"
        write_bundle(bundle, ckpt)
    metrics = None
    if cfg.step == "segmentation" and val is not None and len(val):
        metrics = evaluate_model(model, val, *norm, threshold=cfg.threshold)
    return StepResult(tag, model, bundle, tlog, norm, ckpt, val_history, metrics)


def _norm_extra(model, norm) -> dict:
    return {"final_layer": model.final_layer_name,
            "norm_mean": [float(v) for v in norm[0]],
            "norm_std": [float(v) for v in norm[1]]}


def _save(model, path, tag, digest, norm):
    write_bundle(bundle_from_model(model, tag, digest, _norm_extra(model, norm)), path)


# ---------------------------------------------------------------------------
# The three steps
# ---------------------------------------------------------------------------


def run_step1(cfg: StepConfig, unlabeled: SampleSet, model: nn.Module, **kw) -> StepResult:
    """Self-supervised inpainting.  ``model`` must already predict RGB."""
    if cfg.step != "inpaint":
        raise ConfigError("run_step1 needs an inpaint config")
    return train_step(cfg, model, SampleSet(unlabeled.images, None, unlabeled.ids), **kw)


def run_step2(cfg: StepConfig, labeled: SampleSet, model: nn.Module, **kw) -> StepResult:
    """Road-guided inpainting on labelled images, initialised from step 1."""
    if cfg.step != "guided_inpaint":
        raise ConfigError("run_step2 needs a guided_inpaint config")
    if labeled.labels is None:
        raise MissingLabelError("guided inpainting needs a road label for every image")
    if not np.any(labeled.labels == 1):
        warnings.warn("no road pixels in any label: guided loss is identically zero",
                      stacklevel=2)
    return train_step(cfg, model, labeled, **kw)


def run_step3(cfg: StepConfig, labeled: SampleSet, model: nn.Module, num_classes: int = 1,
              seed: int = 0, **kw) -> StepResult:
    """Segmentation fine-tuning.  ``model`` comes from step 2 (or step 1, or a
    fresh initialisation for the baseline); its head is reset to
    ``num_classes`` channels here."""
    if cfg.step != "segmentation":
        raise ConfigError("run_step3 needs a segmentation config")
    model = to_segmentation_head(model, num_classes, seed=seed)
    return train_step(cfg, model, labeled, seed=seed, **kw)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@dataclass
class LineageEntry:
    step_tag: str
    checkpoint: str
    checkpoint_digest: str
    config_digest: str


@dataclass
class RunLineage:
    entries: list[LineageEntry] = field(default_factory=list)

    @property
    def steps(self) -> list[str]:
        return [e.step_tag for e in self.entries]

    def to_text(self) -> str:
        return "".join(f"{e.step_tag}\t{e.checkpoint}\t{e.checkpoint_digest}\t"
                       f"{e.config_digest}\n" for e in self.entries)

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def read(cls, path) -> RunLineage:
        entries = [LineageEntry(*line.split("\t")) for line in
                   Path(path).read_text().splitlines() if line.strip()]
        return cls(entries)


@dataclass
class PipelineConfig:
    steps: dict[str, StepConfig]
    seed: int = 0
    num_classes: int = 1
    base_channels: int = 16
    skip_guided: bool = False
    scratch: bool = False
    profile: str = "desk"

    def step3_digest(self) -> str:
        """Digest of the step-3 settings with the initialisation source left
        out, identical for baseline and pretrained runs."""
        return self.steps["step3"].digest(exclude=("init_from",))


@dataclass
class PipelineResult:
    lineage: RunLineage
    results: dict[str, StepResult]

    @property
    def final(self) -> StepResult:
        return self.results["step3"]


def _entry(res: StepResult) -> LineageEntry:
    return LineageEntry(res.step_tag, str(res.checkpoint or "<memory>"), res.bundle.digest,
                        res.bundle.config_digest)


def run_pipeline(config: PipelineConfig, unlabeled: SampleSet | None, labeled: SampleSet,
                 val: SampleSet | None = None, out_dir: str | Path | None = None,
                 model_factory: Callable[[int], nn.Module] | None = None) -> PipelineResult:
    """Run steps 1-3 in order, passing weights through checkpoint bundles.

    ``skip_guided`` goes straight from step 1 to step 3; ``scratch`` runs
    step 3 alone from a fresh model (the baseline).  Completed checkpoints
    stay on disk if a later step fails.
    """
    out = None if out_dir is None else Path(out_dir)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    factory = model_factory or (lambda k: ToyUNet(k, base_channels=config.base_channels))
    seed = config.seed
    lineage = RunLineage()
    results: dict[str, StepResult] = {}

    def persist():
        if out is not None:
            lineage.write(out / "lineage.txt")

    torch.manual_seed(seed)
    model = factory(config.num_classes)
    step3_cfg = config.steps["step3"]
    try:
        if not config.scratch:
            if unlabeled is None:
                raise ConfigError("step 1 needs unlabeled images")
            model = to_inpainting_head(model, seed=seed)
            res = run_step1(config.steps["step1"], unlabeled, model, seed=seed + 1,
                            val=val, out_dir=out and out / "step1")
            results["step1"] = res
            lineage.entries.append(_entry(res))
            persist()
            model = res.model
            if not config.skip_guided:
                model = _transfer(res.bundle, factory, 3)
                res = run_step2(config.steps["step2"], labeled, model, seed=seed + 2,
                                val=val, out_dir=out and out / "step2")
                results["step2"] = res
                lineage.entries.append(_entry(res))
                persist()
            step3_cfg = replace(step3_cfg, init_from=res.bundle.digest)
            model = _transfer(res.bundle, factory, 3)
        res = run_step3(step3_cfg, labeled, model, config.num_classes, seed=seed + 3,
                        val=val, out_dir=out and out / "step3",
                        config_digest=config.step3_digest())
        results["step3"] = res
        lineage.entries.append(_entry(res))
    finally:
        persist()
    return PipelineResult(lineage, results)


def _transfer(bundle: CheckpointBundle, factory, channels: int) -> nn.Module:
    """Fresh model of the pipeline architecture loaded from ``bundle``."""
    target = to_inpainting_head(factory(1)) if channels == 3 else factory(channels)
    load_checkpoint(bundle, target)
    return target


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------

_FLOAT_KEYS = {"lr", "lr_gamma", "momentum", "weight_decay", "threshold", "grad_clip"}
_INT_KEYS = {"epochs", "batch_size"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _FLOAT_KEYS:
        return None if raw.lower() in ("", "none") else float(raw)
    if key in _INT_KEYS:
        return int(raw)
    if key == "lr_milestones":
        return tuple(int(v) for v in raw.replace(",", " ").split())
    if key == "loss_weights":
        a, b = (float(v) for v in raw.replace(",", " ").split())
        return losses.LossWeights(a, b)
    if key == "mask_schedule":
        return masking.MaskSchedule.from_text(raw.replace(";", "\n"))
    if key == "augment":
        return raw.lower() in ("1", "true", "yes", "on")
    if key == "init_from":
        return raw or None
    return raw


STEP_KEYS = {f.name for f in fields(StepConfig)} - {"step"}
PIPELINE_KEYS = {"seed", "num_classes", "base_channels", "skip_guided", "scratch",
                 "profile", "canvas", "segmentation"}


def load_pipeline_config(path: str | Path | None = None,
                         overrides: dict[str, str] | None = None) -> PipelineConfig:
    """Read an INI-style config with ``[pipeline]``, ``[step1]``, ``[step2]``
    and ``[step3]`` sections.  Keys missing from the file fall back to the
    chosen profile; ``overrides`` (``"section.key" -> value``) win over both."""
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        if not parser.read(path):
            raise ConfigError(f"cannot read config {path}")
    for key, value in (overrides or {}).items():
        section, _, name = key.partition(".")
        if not name:
            section, name = "pipeline", section
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, name, str(value))

    known = {"pipeline", "step1", "step2", "step3"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    pipe = dict(parser["pipeline"]) if parser.has_section("pipeline") else {}
    bad = set(pipe) - PIPELINE_KEYS
    if bad:
        raise ConfigError(f"unknown pipeline keys: {sorted(bad)}")
    profile = pipe.get("profile", "desk")
    segmentation = pipe.get("segmentation", "spin")
    if profile == "desk":
        steps = desk_configs(int(pipe.get("canvas", 96)), segmentation=segmentation)
    elif profile == "paper":
        steps = paper_configs(segmentation)
    else:
        raise ConfigError(f"unknown profile {profile!r}")
    for tag in ("step1", "step2", "step3"):
        if not parser.has_section(tag):
            continue
        items = dict(parser[tag])
        bad = set(items) - STEP_KEYS
        if bad:
            raise ConfigError(f"unknown keys in [{tag}]: {sorted(bad)}")
        try:
            steps[tag] = replace(steps[tag], **{k: _parse_value(k, v) for k, v in items.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{tag}]: {exc}") from exc

    def flag(name):
        return pipe.get(name, "false").lower() in ("1", "true", "yes", "on")

    return PipelineConfig(steps, seed=int(pipe.get("seed", 0)),
                          num_classes=int(pipe.get("num_classes", 1)),
                          base_channels=int(pipe.get("base_channels", 16)),
                          skip_guided=flag("skip_guided"), scratch=flag("scratch"),
                          profile=profile)


def dump_pipeline_config(config: PipelineConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser["pipeline"] = {"profile": config.profile, "seed": str(config.seed),
                          "num_classes": str(config.num_classes),
                          "base_channels": str(config.base_channels),
                          "skip_guided": str(config.skip_guided).lower(),
                          "scratch": str(config.scratch).lower()}
    for tag, cfg in config.steps.items():
        d = {}
        for k, v in cfg.to_dict().items():
            if k == "step":
                continue
            if v is None:
                continue
            if k == "mask_schedule":
                d[k] = "; ".join(f"{e} {n} {s}" for e, n, s in v)
            elif k == "lr_milestones" or k == "loss_weights":
                d[k] = " ".join(str(x) for x in v)
            else:
                d[k] = str(v)
        parser[tag] = d
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def desk_pipeline(seed: int = 0, canvas: int = 96, **kwargs) -> PipelineConfig:
    return PipelineConfig(desk_configs(canvas), seed=seed, **kwargs)
