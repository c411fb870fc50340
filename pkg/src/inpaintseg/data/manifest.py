"""Dataset manifests: which crop of which source image goes to which split.

A manifest file is plain text.  Comment lines starting with ``#`` carry the
crop settings and the source table; every other line is one record::

    image_path<TAB>label_path<TAB>split<TAB>source_id<TAB>row<TAB>col<TAB>city

An empty ``label_path`` marks an unlabeled record.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from PIL import Image

from .tiling import crop_tiles, five_crop_offsets

SPLITS = ("train", "val", "test")
LEVELS = {"full": 1, "half": 2, "quarter": 4}


class HeterogeneousInput(ValueError):
    pass


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class SourceImage:
    source_id: str
    image_path: str
    label_path: str | None = None
    height: int | None = None
    width: int | None = None
    city: str = ""

    def size(self) -> tuple[int, int]:
        if self.height is None or self.width is None:
            with Image.open(self.image_path) as im:
                w, h = im.size
            return h, w
        return self.height, self.width


@dataclass(frozen=True)
class SampleRecord:
    image_ref: str
    label_ref: str | None
    split: str
    source_id: str
    crop_offset: tuple[int, int] = (0, 0)
    city: str = ""

    def to_line(self) -> str:
        r, c = self.crop_offset
        return "\t".join([self.image_ref, self.label_ref or "", self.split,
                          self.source_id, str(r), str(c), self.city])

    @classmethod
    def from_line(cls, line: str) -> SampleRecord:
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 7:
            raise ValueError(f"manifest line needs 7 fields, got {len(parts)}: {line!r}")
        image, label, split, sid, r, c, city = parts
        return cls(image, label or None, split, sid, (int(r), int(c)), city)


@dataclass
class DatasetManifest:
    records: list[SampleRecord]
    crop_size: int
    overlap: int
    class_names: list[str] = field(default_factory=lambda: ["background", "road"])
    ground_sampling_distance: float | None = None
    sources: list[SourceImage] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def source_ids(self) -> list[str]:
        return [s.source_id for s in self.sources]

    def filter(self, *, split: str | None = None, cities=None,
               exclude_cities=None) -> DatasetManifest:
        """Sub-manifest by split and/or city tag (e.g. a held-out city)."""
        def keep_city(city):
            if cities is not None and city not in cities:
                return False
            return not (exclude_cities is not None and city in exclude_cities)

        recs = [r for r in self.records
                if (split is None or r.split == split) and keep_city(r.city)]
        ids = {r.source_id for r in recs}
        return replace(self, records=recs,
                       sources=[s for s in self.sources if s.source_id in ids])

    def write(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text())

    def to_text(self) -> str:
        gsd = "" if self.ground_sampling_distance is None else repr(self.ground_sampling_distance)
        lines = [f"# crop_size={self.crop_size}",
                 f"# overlap={self.overlap}",
                 f"# class_names={','.join(self.class_names)}",
                 f"# ground_sampling_distance={gsd}"]
        for s in self.sources:
            h, w = s.size()
            lines.append("#source\t" + "\t".join(
                [s.source_id, s.image_path, s.label_path or "", str(h), str(w), s.city]))
        lines += [r.to_line() for r in self.records]
        return "\n".join(lines) + "\n"

    @classmethod
    def read(cls, path: str | Path) -> DatasetManifest:
        meta: dict[str, str] = {}
        sources, records = [], []
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            if line.startswith("#source\t"):
                sid, img, lab, h, w, city = line.split("\t")[1:]
                sources.append(SourceImage(sid, img, lab or None, int(h), int(w), city))
            elif line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key] = value
            else:
                records.append(SampleRecord.from_line(line))
        gsd = meta.get("ground_sampling_distance", "")
        return cls(records, int(meta.get("crop_size", 0)), int(meta.get("overlap", 0)),
                   meta.get("class_names", "background,road").split(","),
                   float(gsd) if gsd else None, sources)


def _as_source(item, index: int) -> SourceImage:
    if isinstance(item, SourceImage):
        return item
    image, label = (item, None) if isinstance(item, (str, Path)) else item
    return SourceImage(f"{index:06d}", str(image), None if label is None else str(label))


TILINGS = ("grid", "five", "whole")


def build_manifest(sources, crop: int, overlap: int, split: str = "train",
                   class_names=("background", "road"),
                   ground_sampling_distance: float | None = None,
                   tiling: str = "grid") -> DatasetManifest:
    """One record per (source, tile offset).

    ``sources`` holds :class:`SourceImage` entries or ``(image, label)``
    pairs; all must share one size.  ``tiling`` picks the offsets: the
    overlapping ``grid``, the ``five`` FiveCrop windows, or the ``whole``
    source as a single record (``crop`` and ``overlap`` are then ignored).
    """
    if tiling not in TILINGS:
        raise ValueError(f"tiling must be one of {TILINGS}, got {tiling!r}")
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    sources = [_as_source(s, i) for i, s in enumerate(sources)]
    if not sources:
        raise EmptyInput("no source images given")
    sizes = {s.size() for s in sources}
    if len(sizes) > 1:
        raise HeterogeneousInput(f"sources have mixed sizes: {sorted(sizes)}")
    size = sizes.pop()
    if tiling == "whole":
        h, w = size
        if h != w:
            raise ValueError(f"whole-image records need square sources, got {h}x{w}")
        crop, overlap, offsets = h, 0, [(0, 0)]
    elif tiling == "five":
        offsets, overlap = five_crop_offsets(*size, crop), 0
    else:
        offsets = crop_tiles(size, crop, overlap)
    records = [SampleRecord(s.image_path, s.label_path, split, s.source_id, off, s.city)
               for s in sources for off in offsets]
    return DatasetManifest(records, crop, overlap, list(class_names),
                           ground_sampling_distance, sources)


def merge_manifests(*manifests: DatasetManifest) -> DatasetManifest:
    """Concatenate manifests that share crop settings (e.g. train + test for
    self-supervised pretraining)."""
    first = manifests[0]
    for m in manifests[1:]:
        if (m.crop_size, m.overlap) != (first.crop_size, first.overlap):
            raise HeterogeneousInput("manifests use different crop settings")
    return replace(first, records=[r for m in manifests for r in m.records],
                   sources=[s for m in manifests for s in m.sources])


def _rank_key(seed: int, source_id: str) -> bytes:
    return hashlib.blake2b(f"{seed}\x00{source_id}".encode(), digest_size=16).digest()


def subset_halving(manifest: DatasetManifest, level: str, seed: int = 0) -> DatasetManifest:
    """Keep ceil(n/2) ("half") or ceil(n/4) ("quarter") source images and re-crop.

    Sources are ranked by a seeded hash of their id, so the subsets nest:
    quarter is contained in half is contained in full, and halving a half
    gives the quarter.
    """
    if level not in LEVELS:
        raise ValueError(f"level must be one of {sorted(LEVELS)}, got {level!r}")
    if not manifest.sources:
        raise EmptyInput("manifest has no sources")
    n_keep = math.ceil(len(manifest.sources) / LEVELS[level])
    ranked = sorted(manifest.sources, key=lambda s: _rank_key(seed, s.source_id))
    kept = {s.source_id for s in ranked[:n_keep]}
    sources = [s for s in manifest.sources if s.source_id in kept]
    records = [r for r in manifest.records if r.source_id in kept]
    return replace(manifest, records=records, sources=sources)


# -- ingestion of real datasets ---------------------------------------------

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".tif", ".tiff")


def scan_deepglobe(root: str | Path) -> list[SourceImage]:
    """``<id>_sat.<ext>`` (or ``<id>.<ext>``) images with ``<id>_mask.png`` labels."""
    root = Path(root)
    out = []
    for p in sorted(root.iterdir()):
        if p.suffix.lower() not in IMAGE_SUFFIXES or p.stem.endswith("_mask"):
            continue
        sid = p.stem[:-4] if p.stem.endswith("_sat") else p.stem
        label = root / f"{sid}_mask.png"
        out.append(SourceImage(sid, str(p), str(label) if label.exists() else None))
    return out


def scan_city_osm(root: str | Path) -> list[SourceImage]:
    """Per-city folders of ``<name>_image.png`` / ``<name>_labels.png`` pairs."""
    root = Path(root)
    out = []
    for city_dir in sorted(d for d in root.iterdir() if d.is_dir()):
        for p in sorted(city_dir.glob("*_image.png")):
            name = p.stem[:-len("_image")]
            label = city_dir / f"{name}_labels.png"
            out.append(SourceImage(f"{city_dir.name}/{name}", str(p),
                                   str(label) if label.exists() else None,
                                   city=city_dir.name))
    return out
