"""Load manifest records into memory as arrays ready for training."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .manifest import DatasetManifest
from .synthetic import SceneSet


@dataclass
class SampleSet:
    images: np.ndarray                 # (N, H, W, 3) uint8
    labels: np.ndarray | None = None   # (N, H, W) class indices
    ids: list[str] | None = None

    def __len__(self):
        return len(self.images)

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    @classmethod
    def from_scenes(cls, scenes: SceneSet) -> SampleSet:
        return cls(scenes.images, scenes.labels, [f"{i}" for i in range(len(scenes))])


def _read(path: Path, mode: str) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert(mode))


def load_manifest(manifest: DatasetManifest, root: str | Path = ".",
                  require_labels: bool = False) -> SampleSet:
    """Read and crop every record.  Labels are loaded only if every record
    has one, unless ``require_labels`` makes a missing label an error."""
    root = Path(root)
    crop = manifest.crop_size
    cache: dict[str, np.ndarray] = {}

    def crop_of(ref: str, mode: str, offset) -> np.ndarray:
        key = f"{mode}:{ref}"
        if key not in cache:
            cache.clear()
            cache[key] = _read(root / ref, mode)
        r, c = offset
        return cache[key][r:r + crop, c:c + crop]

    missing = [r for r in manifest.records if r.label_ref is None]
    if require_labels and missing:
        raise MissingLabelError(
            f"{len(missing)} records lack labels, e.g. {missing[0].image_ref}")
    images = np.stack([crop_of(r.image_ref, "RGB", r.crop_offset) for r in manifest.records])
    labels = None
    if not missing:
        labels = np.stack([crop_of(r.label_ref, "L", r.crop_offset) for r in manifest.records])
        if labels.max(initial=0) == 255:
            labels = (labels > 127).astype(np.uint8)
    ids = [f"{r.source_id}@{r.crop_offset[0]},{r.crop_offset[1]}" for r in manifest.records]
    return SampleSet(images, labels, ids)


class MissingLabelError(ValueError):
    pass
