"""IoU metrics, the baseline/ablation experiment matrix and report files."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import masking

ARMS = ("baseline", "no_guided", "full_method")
VARIANTS = ("full", "half", "quarter")
DOMAINS = ("in-domain", "holdout")


class UndefinedIoU(ValueError):
    """Neither prediction nor label contains the class."""


def iou(prediction, label, class_id: int = 1) -> float:
    p = np.asarray(prediction) == class_id
    t = np.asarray(label) == class_id
    if p.shape != t.shape:
        raise ValueError(f"prediction {p.shape} and label {t.shape} differ")
    union = np.count_nonzero(p | t)
    if union == 0:
        raise UndefinedIoU(f"class {class_id} absent from prediction and label")
    return np.count_nonzero(p & t) / union


def predict_to_classes(logits, threshold: float = 0.5) -> np.ndarray:
    """Class map from ``(..., K, H, W)`` logits.

    One channel: foreground where sigmoid(logit) >= threshold, ties included.
    Several channels: argmax.
    """
    x = torch.as_tensor(logits)
    if x.shape[-3] == 1:
        return (torch.sigmoid(x[..., 0, :, :]) >= threshold).to(torch.uint8).numpy()
    return x.argmax(dim=-3).to(torch.uint8).numpy()


@dataclass
class IoUReport:
    classes: list[int]
    intersection: dict[int, int]
    union: dict[int, int]
    n_images: int
    per_image: dict[int, list[float]] = field(default_factory=dict)

    @property
    def per_class_iou(self) -> dict[int, float]:
        """Dataset-level IoU; classes with an empty union map to NaN."""
        return {c: (self.intersection[c] / self.union[c]) if self.union[c] else math.nan
                for c in self.classes}

    @property
    def undefined_classes(self) -> list[int]:
        return [c for c in self.classes if self.union[c] == 0]

    def mean_image_iou(self, class_id: int) -> float:
        vals = self.per_image.get(class_id, [])
        return float(np.mean(vals)) if vals else math.nan

    def iou_percent(self, class_id: int = 1) -> float:
        return 100.0 * self.per_class_iou[class_id]

    def to_text(self) -> str:
        lines = ["class\tintersection\tunion\tiou\tmean_image_iou"]
        for c in self.classes:
            lines.append(f"{c}\t{self.intersection[c]}\t{self.union[c]}\t"
                         f"{self.per_class_iou[c]:.6f}\t{self.mean_image_iou(c):.6f}")
        lines.append(f"# n_images={self.n_images}")
        return "\n".join(lines) + "\n"


class IoUAccumulator:
    """Sums intersections and unions over images before dividing."""

    def __init__(self, classes=(1,)):
        self.classes = list(classes)
        self.inter = dict.fromkeys(self.classes, 0)
        self.union = dict.fromkeys(self.classes, 0)
        self.per_image = {c: [] for c in self.classes}
        self.n = 0

    def update(self, prediction, label) -> None:
        prediction, label = np.asarray(prediction), np.asarray(label)
        if prediction.shape != label.shape:
            raise ValueError("prediction and label differ in shape")
        if prediction.ndim == 2:
            prediction, label = prediction[None], label[None]
        for p, t in zip(prediction, label):
            self.n += 1
            for c in self.classes:
                pc, tc = p == c, t == c
                i, u = int(np.count_nonzero(pc & tc)), int(np.count_nonzero(pc | tc))
                self.inter[c] += i
                self.union[c] += u
                if u:
                    self.per_image[c].append(i / u)

    def report(self) -> IoUReport:
        return IoUReport(self.classes, dict(self.inter), dict(self.union), self.n,
                         {c: list(v) for c, v in self.per_image.items()})


def evaluated_classes(num_classes: int) -> list[int]:
    """Binary models report the road class; multi-class ones all but background."""
    return [1] if num_classes <= 2 else list(range(1, num_classes))


@torch.no_grad()
def evaluate_model(model, samples, mean, std, threshold: float = 0.5,
                   batch_size: int = 32, classes=None) -> IoUReport:
    from .data.augment import normalize

    if samples.labels is None:
        raise ValueError("evaluation needs labelled samples")
    was_training = model.training
    model.eval()
    acc = None
    for start in range(0, len(samples), batch_size):
        x = normalize(samples.images[start:start + batch_size], mean, std)
        logits = model(torch.from_numpy(x).permute(0, 3, 1, 2))
        if acc is None:
            k = logits.shape[1]
            acc = IoUAccumulator(classes or evaluated_classes(max(k, 2)))
        acc.update(predict_to_classes(logits, threshold), samples.labels[start:start + batch_size])
    model.train(was_training)
    return acc.report()


# ---------------------------------------------------------------------------
# Experiment matrix
# ---------------------------------------------------------------------------


@dataclass
class MatrixRow:
    variant: str
    domain: str
    arm: str
    train_images: int
    metrics: IoUReport | None
    seed: int | None = None
    status: str = "ok"

    def road_iou(self) -> float:
        if self.metrics is None:
            return math.nan
        return self.metrics.iou_percent(1)


@dataclass
class ExperimentMatrix:
    rows: list[MatrixRow] = field(default_factory=list)

    def add(self, row: MatrixRow) -> None:
        key = (row.variant, row.domain, row.arm, row.seed)
        if any((r.variant, r.domain, r.arm, r.seed) == key for r in self.rows):
            raise ValueError(f"duplicate matrix row {key}")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def mean_iou(self, variant: str, arm: str, domain: str = "in-domain",
                 class_id: int = 1) -> float:
        vals = [100 * r.metrics.per_class_iou[class_id] for r in self.rows
                if (r.variant, r.arm, r.domain) == (variant, arm, domain)
                and r.metrics is not None]
        return float(np.mean(vals)) if vals else math.nan

    def summary(self) -> ExperimentMatrix:
        """One row per (variant, domain, arm) holding the IoU averaged over seeds."""
        out = ExperimentMatrix()
        keys = sorted({(r.variant, r.domain, r.arm) for r in self.rows},
                      key=lambda k: (DOMAINS.index(k[1]) if k[1] in DOMAINS else 9,
                                     VARIANTS.index(k[0]) if k[0] in VARIANTS else 9,
                                     ARMS.index(k[2]) if k[2] in ARMS else 9))
        for variant, domain, arm in keys:
            rows = [r for r in self.rows if (r.variant, r.domain, r.arm) == (variant, domain, arm)]
            ok = [r for r in rows if r.metrics is not None]
            if not ok:
                out.add(MatrixRow(variant, domain, arm, rows[0].train_images, None,
                                  status="failed"))
                continue
            classes = ok[0].metrics.classes
            mean_iou = {c: float(np.mean([r.metrics.per_class_iou[c] for r in ok]))
                        for c in classes}
            out.add(MatrixRow(variant, domain, arm, rows[0].train_images,
                              _MeanReport(classes, mean_iou, ok[0].metrics.n_images)))
        return out

    def to_table(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
        class_ids = sorted({c for r in self.rows if r.metrics for c in r.metrics.classes}) or [1]
        writer.writerow(["variant", "domain", "arm", "seed", "train_images", "status"]
                        + [f"iou_class{c}" for c in class_ids])
        for r in self.rows:
            vals = [f"{100 * r.metrics.per_class_iou.get(c, math.nan):.4f}" if r.metrics
                    else "nan" for c in class_ids]
            writer.writerow([r.variant, r.domain, r.arm, "" if r.seed is None else r.seed,
                             r.train_images, r.status] + vals)
        return buf.getvalue()

    @classmethod
    def from_table(cls, text: str) -> ExperimentMatrix:
        reader = csv.reader(io.StringIO(text), delimiter="\t")
        header = next(reader)
        class_ids = [int(h.removeprefix("iou_class")) for h in header[6:]]
        out = cls()
        for row in reader:
            variant, domain, arm, seed, n, status = row[:6]
            vals = {c: float(v) / 100 for c, v in zip(class_ids, row[6:])}
            metrics = None if status != "ok" else _MeanReport(class_ids, vals, 0)
            out.add(MatrixRow(variant, domain, arm, int(n), metrics,
                              int(seed) if seed else None, status))
        return out


class _MeanReport(IoUReport):
    """IoU values without the underlying pixel counts (seed means, tables)."""

    def __init__(self, classes, values: dict[int, float], n_images: int):
        super().__init__(list(classes), {}, {}, n_images)
        self._values = dict(values)

    @property
    def per_class_iou(self):
        return dict(self._values)


def run_matrix(spec: list[dict], evaluate) -> ExperimentMatrix:
    """Evaluate each row of ``spec``.

    ``spec`` entries carry ``variant``, ``domain``, ``arm``, ``train_images``,
    optional ``seed`` and a ``checkpoint`` path.  ``evaluate(row_spec)``
    returns an :class:`IoUReport`.  Missing checkpoints mark the row failed
    instead of aborting.
    """
    matrix = ExperimentMatrix()
    for row in spec:
        ckpt = row.get("checkpoint")
        if ckpt is not None and not Path(ckpt).exists():
            metrics, status = None, "failed: missing checkpoint"
        else:
            metrics, status = evaluate(row), "ok"
        matrix.add(MatrixRow(row["variant"], row.get("domain", "in-domain"), row["arm"],
                             int(row.get("train_images", 0)), metrics, row.get("seed"), status))
    return matrix


def emit_report(matrix: ExperimentMatrix, out_dir: str | Path,
                schedule: masking.MaskSchedule | None = None,
                canvas: int = 512, epochs=(10, 30, 50), seed: int = 0,
                class_id: int = 1) -> dict[str, Path]:
    """Write the table, an IoU-vs-training-size plot per arm and, when a
    schedule is given, the mask-evolution figure."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not len(matrix):
        raise ValueError("empty matrix")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"table": out / "matrix.tsv", "plot": out / "iou_vs_size.png",
             "plot_data": out / "iou_vs_size.tsv"}
    paths["table"].write_text(matrix.to_table())

    fig, ax = plt.subplots(figsize=(5, 3.5))
    data_lines = ["domain\tarm\ttrain_images\tiou"]
    groups = itertools.groupby(
        sorted((r for r in matrix.rows if r.metrics is not None),
               key=lambda r: (r.domain, r.arm, r.train_images)),
        key=lambda r: (r.domain, r.arm))
    for (domain, arm), rows in groups:
        rows = list(rows)
        sizes = sorted({r.train_images for r in rows})
        ys = [float(np.mean([100 * r.metrics.per_class_iou[class_id]
                             for r in rows if r.train_images == n])) for n in sizes]
        label = arm if domain == "in-domain" else f"{arm} ({domain})"
        ax.plot(sizes, ys, marker="o", label=label)
        data_lines += [f"{domain}\t{arm}\t{n}\t{y:.4f}" for n, y in zip(sizes, ys)]
    ax.set_xlabel("training images")
    ax.set_ylabel("road IoU [%]")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(paths["plot"], dpi=120)
    plt.close(fig)
    paths["plot_data"].write_text("\n".join(data_lines) + "\n")

    if schedule is not None:
        paths["masks"] = out / "mask_evolution.png"
        mask_figure(schedule, paths["masks"], canvas=canvas, epochs=epochs, seed=seed)
    return paths


def mask_figure(schedule: masking.MaskSchedule, path, canvas: int = 512,
                epochs=(10, 30, 50), seed: int = 0) -> Path:
    """Masks at the given epochs side by side, removed pixels in black."""
    from PIL import Image

    panels = []
    for e in epochs:
        count, size = masking.schedule_at(schedule, e)
        size = min(size, canvas)
        m = masking.generate_mask(canvas, canvas, masking.MaskSpec(count, size, seed=[seed, e]))
        panels.append(m * 255)
        panels.append(np.full((canvas, max(2, canvas // 64)), 128, dtype=np.uint8))
    grid = np.concatenate(panels[:-1], axis=1).astype(np.uint8)
    Image.fromarray(grid).save(path)
    return Path(path)
