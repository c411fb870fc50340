"""Cluster masks for the inpainting steps and their epoch schedule.

A mask is a ``uint8`` array of shape ``(H, W)`` holding 1 where the input
pixel is kept and 0 where it is removed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

DEFAULT_SCHEDULE_TEXT = """\
# epoch  cluster_count  cluster_size
0        100            10
10       70             12
20       52             14
30       50             15
40       25             20
50       11             30
"""


class InvalidMaskSpec(ValueError):
    pass


class InvalidSchedule(ValueError):
    pass


@dataclass(frozen=True)
class Milestone:
    epoch: int
    cluster_count: int
    cluster_size: int


@dataclass(frozen=True)
class MaskSchedule:
    milestones: tuple[Milestone, ...]

    def __post_init__(self):
        ms = self.milestones
        if not ms:
            raise InvalidSchedule("schedule needs at least one milestone")
        if ms[0].epoch != 0:
            raise InvalidSchedule("first milestone must be at epoch 0")
        for m in ms:
            if m.cluster_count < 1 or m.cluster_size < 1:
                raise InvalidSchedule(f"non-positive count or size in {m}")
        for a, b in zip(ms, ms[1:]):
            if b.epoch <= a.epoch:
                raise InvalidSchedule("milestone epochs must be strictly increasing")
            if b.cluster_size < a.cluster_size:
                raise InvalidSchedule("cluster_size must be non-decreasing")
            if b.cluster_count > a.cluster_count:
                raise InvalidSchedule("cluster_count must be non-increasing")

    @classmethod
    def from_rows(cls, rows) -> MaskSchedule:
        return cls(tuple(Milestone(int(e), int(n), int(s)) for e, n, s in rows))

    @classmethod
    def from_text(cls, text: str) -> MaskSchedule:
        rows = []
        for line in text.splitlines():
            line = line.split("#", 1)[0].replace(",", " ").strip()
            if line:
                rows.append(line.split())
        if any(len(r) != 3 for r in rows):
            raise InvalidSchedule("each schedule line needs epoch, count, size")
        return cls.from_rows(rows)

    def to_text(self) -> str:
        lines = ["# epoch  cluster_count  cluster_size"]
        lines += [f"{m.epoch:<8d} {m.cluster_count:<14d} {m.cluster_size}"
                  for m in self.milestones]
        return "\n".join(lines) + "\n"

    @property
    def final(self) -> Milestone:
        return self.milestones[-1]

    def rescaled(self, epoch_factor: float = 1.0, size_factor: float = 1.0,
                 count_factor: float = 1.0) -> MaskSchedule:
        """Schedule for shorter runs or smaller canvases.

        Milestone epochs are multiplied by ``epoch_factor`` and rounded down
        (the first stays at 0, later ones at least 1); cluster sizes and
        counts are multiplied by ``size_factor`` and ``count_factor`` and
        rounded half up (at least 1).  Milestones that collapse onto the
        same epoch keep the later entry.
        """
        rows: dict[int, tuple[int, int]] = {}
        for i, m in enumerate(self.milestones):
            epoch = 0 if i == 0 else max(1, math.floor(m.epoch * epoch_factor))
            size = max(1, math.floor(m.cluster_size * size_factor + 0.5))
            count = max(1, math.floor(m.cluster_count * count_factor + 0.5))
            rows[epoch] = (count, size)
        return MaskSchedule.from_rows((e, n, s) for e, (n, s) in sorted(rows.items()))

    def raw_budget(self) -> list[int]:
        """count * size**2 per milestone, the masked pixels before overlap."""
        return [m.cluster_count * m.cluster_size ** 2 for m in self.milestones]


DEFAULT_SCHEDULE = MaskSchedule.from_text(DEFAULT_SCHEDULE_TEXT)


def schedule_at(schedule: MaskSchedule, epoch: int) -> tuple[int, int]:
    """(cluster_count, cluster_size) in force at ``epoch``.

    Values hold between milestones and after the last one.
    """
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    current = schedule.milestones[0]
    for m in schedule.milestones:
        if m.epoch > epoch:
            break
        current = m
    return current.cluster_count, current.cluster_size


@dataclass(frozen=True)
class MaskSpec:
    cluster_count: int
    cluster_size: int
    seed: int | np.random.SeedSequence = 0

    def validate(self, height: int, width: int) -> None:
        if self.cluster_count < 0:
            raise InvalidMaskSpec("cluster_count must be >= 0")
        if self.cluster_size < 1:
            raise InvalidMaskSpec("cluster_size must be >= 1")
        if self.cluster_size > min(height, width):
            raise InvalidMaskSpec(
                f"cluster_size {self.cluster_size} exceeds image {height}x{width}")


def derive_seed(global_seed: int, *keys: int) -> np.random.SeedSequence:
    """Independent stream for (epoch, batch, sample, ...) under one global seed."""
    return np.random.SeedSequence([int(global_seed), *map(int, keys)])


def sample_corners(height: int, width: int, spec: MaskSpec) -> np.ndarray:
    """Top-left corners of the masked squares, shape (count, 2) as (row, col).

    Corners are drawn with replacement so that every square fits inside the
    image.
    """
    spec.validate(height, width)
    rng = np.random.default_rng(spec.seed)
    rows = rng.integers(0, height - spec.cluster_size + 1, size=spec.cluster_count)
    cols = rng.integers(0, width - spec.cluster_size + 1, size=spec.cluster_count)
    return np.stack([rows, cols], axis=1)


def generate_mask(height: int, width: int, spec: MaskSpec) -> np.ndarray:
    mask = np.ones((height, width), dtype=np.uint8)
    s = spec.cluster_size
    for r, c in sample_corners(height, width, spec):
        mask[r:r + s, c:c + s] = 0
    return mask


def masked_fraction(mask: np.ndarray) -> float:
    mask = np.asarray(mask)
    return float(np.count_nonzero(mask == 0)) / mask.size


def apply_mask(image, mask):
    """Zero the removed pixels of an ``(H, W, C)`` image (or ``(H, W)``).

    Works for numpy arrays and torch tensors; the input is not modified.
    """
    if tuple(image.shape[:2]) != tuple(mask.shape):
        raise ValueError(
            f"mask shape {tuple(mask.shape)} does not match image {tuple(image.shape[:2])}")
    if image.ndim == 3:
        mask = mask[..., None]
    return image * mask


def mask_batch(shape: tuple[int, int], count: int, size: int,
               seeds: list[np.random.SeedSequence]) -> np.ndarray:
    """One fresh mask per sample, stacked to ``(N, H, W)``."""
    h, w = shape
    return np.stack([generate_mask(h, w, MaskSpec(count, size, s)) for s in seeds])


def save_mask_png(mask: np.ndarray, path: str | Path) -> None:
    Image.fromarray((np.asarray(mask, dtype=np.uint8) * 255)).save(path)


def load_mask_png(path: str | Path) -> np.ndarray:
    return (np.asarray(Image.open(path).convert("L")) > 127).astype(np.uint8)
