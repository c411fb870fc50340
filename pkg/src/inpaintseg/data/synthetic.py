"""Procedural aerial-road scenes for desk-scale experiments.

Each scene is a textured background with fields, rectangular buildings,
straight roads crossing the canvas and tree crowns that may occlude the
roads.  The label marks every pixel inside a road, occluded or not.  Scene
"styles" change the palette and clutter so that a train/validate split by
style produces a domain gap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .manifest import DatasetManifest, SampleRecord, SourceImage


@dataclass(frozen=True)
class Style:
    ground: tuple[int, int, int]
    fields: tuple[tuple[int, int, int], ...]
    road: tuple[int, int, int]
    marking: tuple[int, int, int]
    roofs: tuple[tuple[int, int, int], ...]
    tree: tuple[int, int, int]
    tree_density: float
    texture: float


STYLES = {
    # green countryside
    "A": Style((86, 118, 62), ((110, 140, 70), (150, 150, 90), (70, 100, 55)),
               (118, 116, 112), (210, 210, 200), ((150, 82, 62), (120, 118, 115)),
               (40, 70, 35), 0.6, 14.0),
    # dense grey town
    "B": Style((132, 128, 118), ((115, 120, 100), (150, 145, 135)),
               (105, 105, 108), (220, 220, 215), ((128, 128, 132), (170, 160, 150), (95, 95, 100)),
               (55, 80, 50), 0.3, 10.0),
    # arid
    "C": Style((188, 164, 122), ((170, 150, 110), (200, 180, 140)),
               (92, 88, 84), (230, 225, 210), ((205, 192, 170), (150, 120, 95)),
               (95, 105, 60), 0.2, 16.0),
    # held-out: bluish vegetation, pale concrete roads
    "D": Style((64, 96, 92), ((80, 112, 104), (52, 80, 76), (96, 120, 96)),
               (158, 152, 146), (235, 235, 235), ((112, 70, 62), (140, 140, 150)),
               (30, 60, 55), 0.5, 12.0),
}


@dataclass(frozen=True)
class Road:
    start: tuple[float, float]   # (x, y) in pixel units, origin at the top-left corner
    end: tuple[float, float]
    width: float


@dataclass(frozen=True)
class SyntheticSceneSpec:
    canvas: int | tuple[int, int] = 96
    road_count: int = 2
    road_width_range: tuple[int, int] = (3, 7)
    background_texture_seed: int = 0
    building_density: float = 0.25
    style: str = "A"
    roads: tuple[Road, ...] | None = None   # explicit geometry, overrides road_count
    roadside_trees: float = 0.0     # expected tree crowns per 10 px of road length
    paved_lots: float = 0.0         # expected road-coloured lots (distractors) per scene
    tone_jitter: float = 0.0        # std of the per-scene road colour offset

    @property
    def shape(self) -> tuple[int, int]:
        c = self.canvas
        return (c, c) if isinstance(c, int) else tuple(c)

    def __post_init__(self):
        lo, hi = self.road_width_range
        if lo < 1 or hi < lo:
            raise ValueError(f"bad road_width_range {self.road_width_range}")
        if not 0 <= self.building_density <= 1:
            raise ValueError("building_density must lie in [0, 1]")
        if min(self.roadside_trees, self.paved_lots, self.tone_jitter) < 0:
            raise ValueError("roadside_trees, paved_lots and tone_jitter must be >= 0")
        if self.style not in STYLES:
            raise ValueError(f"unknown style {self.style!r}")


def rasterize_road(road: Road, shape: tuple[int, int]) -> np.ndarray:
    """Pixels whose centre lies within width/2 of the segment, flat-capped."""
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    px, py = xs + 0.5, ys + 0.5
    (ax, ay), (bx, by) = road.start, road.end
    dx, dy = bx - ax, by - ay
    length2 = dx * dx + dy * dy
    if length2 == 0:
        return np.zeros(shape, dtype=bool)
    t = ((px - ax) * dx + (py - ay) * dy) / length2
    dist = np.abs((px - ax) * dy - (py - ay) * dx) / np.sqrt(length2)
    return (t >= 0) & (t <= 1) & (dist <= road.width / 2)


def rasterize_roads(roads, shape) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    for road in roads:
        mask |= rasterize_road(road, shape)
    return mask


def _border_point(rng, side: int, h: int, w: int) -> tuple[float, float]:
    u = rng.uniform(0.1, 0.9)
    return [(u * w, 0.0), (float(w), u * h), (u * w, float(h)), (0.0, u * h)][side]


def scene_roads(spec: SyntheticSceneSpec) -> tuple[Road, ...]:
    """Road geometry of a scene (explicit, or drawn from the scene seed)."""
    if spec.roads is not None:
        return tuple(spec.roads)
    h, w = spec.shape
    rng = np.random.default_rng([spec.background_texture_seed, 1])
    lo, hi = spec.road_width_range
    roads = []
    for _ in range(spec.road_count):
        s0 = int(rng.integers(0, 4))
        s1 = (s0 + int(rng.integers(1, 4))) % 4
        roads.append(Road(_border_point(rng, s0, h, w), _border_point(rng, s1, h, w),
                          float(rng.integers(lo, hi + 1))))
    return tuple(roads)


def _smooth_noise(rng, shape, cells: int) -> np.ndarray:
    coarse = rng.standard_normal((cells, cells)).astype(np.float32)
    img = Image.fromarray(coarse, mode="F").resize(shape[::-1], Image.BILINEAR)
    return np.asarray(img)


def _disc(shape, cx, cy, r) -> np.ndarray:
    ys, xs = np.ogrid[0:shape[0], 0:shape[1]]
    return (xs + 0.5 - cx) ** 2 + (ys + 0.5 - cy) ** 2 <= r * r


def generate_synthetic_scene(spec: SyntheticSceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Render one scene; returns an ``(H, W, 3)`` uint8 image and its road mask."""
    h, w = spec.shape
    style = STYLES[spec.style]
    rng = np.random.default_rng([spec.background_texture_seed, 0])
    img = np.empty((h, w, 3), dtype=np.float32)
    img[:] = style.ground

    for _ in range(int(rng.integers(1, 4))):
        color = style.fields[int(rng.integers(len(style.fields)))]
        y0, x0 = rng.integers(0, h), rng.integers(0, w)
        fh, fw = rng.integers(h // 6, h // 2 + 1), rng.integers(w // 6, w // 2 + 1)
        img[y0:y0 + fh, x0:x0 + fw] = color
    img += style.texture * _smooth_noise(rng, (h, w), 6)[..., None]

    n_buildings = int(round(spec.building_density * h * w / 150))
    for _ in range(n_buildings):
        bh, bw = rng.integers(5, 13, size=2)
        y0, x0 = rng.integers(0, max(1, h - bh)), rng.integers(0, max(1, w - bw))
        roof = np.array(style.roofs[int(rng.integers(len(style.roofs)))], dtype=np.float32)
        img[y0 + 2:y0 + bh + 2, x0 + 2:x0 + bw + 2] *= 0.55   # shadow
        img[y0:y0 + bh, x0:x0 + bw] = roof + rng.normal(0, 4, size=3)

    # extras draw from their own stream so scenes without them are unchanged
    extra = np.random.default_rng([spec.background_texture_seed, 2])
    road_colour = np.array(style.road, dtype=np.float32)
    if spec.tone_jitter:
        road_colour = road_colour + extra.normal(0, spec.tone_jitter)
    for _ in range(extra.poisson(spec.paved_lots) if spec.paved_lots else 0):
        lh, lw = extra.integers(8, 21, size=2)
        y0, x0 = extra.integers(0, max(1, h - lh)), extra.integers(0, max(1, w - lw))
        img[y0:y0 + lh, x0:x0 + lw] = road_colour + extra.normal(0, 5, size=3)

    roads = scene_roads(spec)
    mask = np.zeros((h, w), dtype=bool)
    for road in roads:
        body = rasterize_road(road, (h, w))
        mask |= body
        tone = road_colour + rng.normal(0, 5, size=3)
        img[body] = tone
        if road.width >= 5:
            centre = rasterize_road(Road(road.start, road.end, 1.0), (h, w))
            ys, xs = np.nonzero(centre)
            dashes = ((xs + ys) // 4) % 2 == 0
            img[ys[dashes], xs[dashes]] = style.marking

    if spec.roadside_trees:
        for road in roads:
            (ax, ay), (bx, by) = road.start, road.end
            length = float(np.hypot(bx - ax, by - ay))
            nx, ny = (ay - by) / max(length, 1e-9), (bx - ax) / max(length, 1e-9)
            for _ in range(extra.poisson(spec.roadside_trees * length / 10)):
                t = extra.uniform(0, 1)
                r = extra.uniform(2.0, 4.5)
                off = extra.choice((-1, 1)) * extra.uniform(0, road.width / 2 + r / 2)
                cx, cy = ax + t * (bx - ax) + off * nx, ay + t * (by - ay) + off * ny
                crown = _disc((h, w), cx, cy, r)
                img[crown] = np.array(style.tree) + extra.normal(0, 6, size=3)

    n_trees = rng.poisson(style.tree_density * h * w / 600)
    for _ in range(n_trees):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        crown = _disc((h, w), cx, cy, rng.uniform(1.5, 3.5))
        img[crown] = np.array(style.tree) + rng.normal(0, 6, size=3)

    img += rng.normal(0, 3.0, size=img.shape)
    return np.clip(img, 0, 255).round().astype(np.uint8), mask.astype(np.uint8)


def scene_specs(n: int, seed: int, styles=("A", "B", "C"), canvas: int = 96,
                road_count_range=(1, 3), **kwargs) -> list[SyntheticSceneSpec]:
    """``n`` scene specs cycling through ``styles``, each with its own seed."""
    rng = np.random.default_rng([seed, 7])
    specs = []
    for i in range(n):
        specs.append(SyntheticSceneSpec(
            canvas=canvas,
            road_count=int(rng.integers(road_count_range[0], road_count_range[1] + 1)),
            background_texture_seed=int(rng.integers(2**31)),
            building_density=float(rng.uniform(0.1, 0.4)),
            style=styles[i % len(styles)], **kwargs))
    return specs


@dataclass
class SceneSet:
    """A batch of rendered scenes kept in memory."""

    images: np.ndarray              # (N, H, W, 3) uint8
    labels: np.ndarray              # (N, H, W) uint8
    styles: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.images)

    def subset(self, index) -> SceneSet:
        index = np.asarray(index)
        return SceneSet(self.images[index], self.labels[index],
                        [self.styles[i] for i in index])


def render_scenes(specs) -> SceneSet:
    pairs = [generate_synthetic_scene(s) for s in specs]
    return SceneSet(np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs]),
                    [s.style for s in specs])


def write_synthetic_dataset(out_dir: str | Path, n_train: int, n_val: int = 0,
                            seed: int = 0, train_styles=("A", "B", "C"),
                            val_styles=None, canvas: int = 96) -> DatasetManifest:
    """Write ``{images,labels}/{train,val}/*.png`` and ``manifest.tsv``.

    Labels are single-channel class indices (0 background, 1 road).  The
    scene style is recorded in the manifest's city column.
    """
    out = Path(out_dir)
    sources: list[SourceImage] = []
    records: list[SampleRecord] = []
    plan = [("train", n_train, train_styles, seed),
            ("val", n_val, val_styles or train_styles, seed + 1_000_003)]
    for split, n, styles, split_seed in plan:
        if n == 0:
            continue
        (out / "images" / split).mkdir(parents=True, exist_ok=True)
        (out / "labels" / split).mkdir(parents=True, exist_ok=True)
        for i, spec in enumerate(scene_specs(n, split_seed, styles, canvas)):
            image, label = generate_synthetic_scene(spec)
            sid = f"{split}_{i:05d}"
            img_path = out / "images" / split / f"{sid}.png"
            lab_path = out / "labels" / split / f"{sid}.png"
            Image.fromarray(image).save(img_path)
            Image.fromarray(label).save(lab_path)
            rel_img, rel_lab = str(img_path.relative_to(out)), str(lab_path.relative_to(out))
            sources.append(SourceImage(sid, rel_img, rel_lab, canvas, canvas, spec.style))
            records.append(SampleRecord(rel_img, rel_lab, split, sid, (0, 0), spec.style))
    manifest = DatasetManifest(records, canvas, 0, ["background", "road"], None, sources)
    manifest.write(out / "manifest.tsv")
    return manifest
