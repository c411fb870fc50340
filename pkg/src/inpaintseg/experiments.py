"""Desk-scale versions of the label-efficiency, ablation and domain-shift
experiments on synthetic scenes.

For each seed, step 1 is run once on every training scene (labels unused);
each dataset variant then gets its own step 2 and step 3 on the labelled
subset, and the baseline trains step 3 from scratch on the same subset.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .data import SampleSet, SourceImage, build_manifest, render_scenes, scene_specs, subset_halving
from .evaluation import ExperimentMatrix, MatrixRow
from .model import ToyUNet, to_inpainting_head
from .trainer import (StepConfig, StepResult, _transfer, desk_configs, run_step1, run_step2,
                      run_step3)

log = logging.getLogger(__name__)


@dataclass
class DeskSetup:
    n_train: int = 256
    n_val: int = 64
    canvas: int = 96
    train_styles: tuple[str, ...] = ("A", "B", "C")
    val_styles: tuple[str, ...] | None = None
    data_seed: int = 2024
    variants: tuple[str, ...] = ("full", "half", "quarter")
    arms: tuple[str, ...] = ("baseline", "full_method")
    extra_arms: dict[str, tuple[str, ...]] = field(default_factory=dict)
    domain: str = "in-domain"
    steps: dict[str, StepConfig] | None = None
    scene_options: dict = field(default_factory=dict)

    def step_configs(self) -> dict[str, StepConfig]:
        return self.steps or desk_configs(self.canvas)


def make_data(setup: DeskSetup) -> tuple[SampleSet, SampleSet]:
    train = render_scenes(scene_specs(setup.n_train, setup.data_seed, setup.train_styles,
                                      setup.canvas, **setup.scene_options))
    val = render_scenes(scene_specs(setup.n_val, setup.data_seed + 1,
                                    setup.val_styles or setup.train_styles, setup.canvas,
                                    **setup.scene_options))
    return SampleSet.from_scenes(train), SampleSet.from_scenes(val)


def variant_index(n: int, variant: str, seed: int) -> np.ndarray:
    """Indices of the scenes kept for a variant, via the manifest subsetting."""
    sources = [SourceImage(f"{i:05d}", f"{i:05d}.png", None, 1, 1) for i in range(n)]
    manifest = build_manifest(sources, 1, 0)
    kept = subset_halving(manifest, variant, seed).source_ids
    return np.array([int(s) for s in kept])


def _subset(samples: SampleSet, index) -> SampleSet:
    return SampleSet(samples.images[index], samples.labels[index],
                     [samples.ids[i] for i in index])


def _fresh(seed: int, channels: int = 1) -> ToyUNet:
    torch.manual_seed(seed)
    return ToyUNet(channels)


def run_desk(setup: DeskSetup, seeds=(0, 1, 2), data=None) -> ExperimentMatrix:
    """Train and evaluate every (seed, variant, arm) of ``setup``."""
    cfgs = setup.step_configs()
    train, val = data or make_data(setup)
    matrix = ExperimentMatrix()
    factory = lambda k: ToyUNet(k)  # noqa: E731
    for seed in seeds:
        t0 = time.time()
        arms_needed = set(setup.arms) | {a for v in setup.extra_arms.values() for a in v}
        step1 = None
        if arms_needed - {"baseline"}:
            model = to_inpainting_head(_fresh(seed), seed=seed)
            step1 = run_step1(cfgs["step1"], train, model, seed=seed + 1)
        for variant in setup.variants:
            idx = variant_index(len(train), variant, setup.data_seed)
            labeled = _subset(train, idx)
            arms = tuple(setup.arms) + setup.extra_arms.get(variant, ())
            for arm in arms:
                res = run_arm(arm, cfgs, labeled, val, seed, step1, factory)
                matrix.add(MatrixRow(variant, setup.domain, arm, len(labeled), res.metrics, seed))
                log.info("seed %d %s %s: road IoU %.2f", seed, variant, arm,
                         res.metrics.iou_percent(1))
        log.info("seed %d done in %.0fs", seed, time.time() - t0)
    return matrix


def run_arm(arm: str, cfgs, labeled: SampleSet, val: SampleSet, seed: int,
            step1: StepResult | None, factory) -> StepResult:
    step3 = cfgs["step3"]
    if arm == "baseline":
        model = _fresh(seed)
    elif arm == "no_guided":
        model = _transfer(step1.bundle, factory, 3)
        step3 = replace(step3, init_from=step1.bundle.digest)
    elif arm == "full_method":
        model = _transfer(step1.bundle, factory, 3)
        step2 = run_step2(cfgs["step2"], labeled, model, seed=seed + 2)
        model = _transfer(step2.bundle, factory, 3)
        step3 = replace(step3, init_from=step2.bundle.digest)
    else:
        raise ValueError(f"unknown arm {arm!r}")
    return run_step3(step3, labeled, model, 1, seed=seed + 3, val=val,
                     config_digest=cfgs["step3"].digest(exclude=("init_from",)))


def label_efficiency_setup(**kw) -> DeskSetup:
    return DeskSetup(extra_arms={"quarter": ("no_guided",)}, **kw)


def domain_shift_setup(**kw) -> DeskSetup:
    """Train on styles A-C, validate on unseen style D."""
    return DeskSetup(train_styles=("A", "B", "C"), val_styles=("D",),
                     variants=("quarter",), domain="holdout", **kw)
