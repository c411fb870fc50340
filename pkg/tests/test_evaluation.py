import itertools
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from inpaintseg.evaluation import (ExperimentMatrix, IoUAccumulator, IoUReport, MatrixRow,
                                   UndefinedIoU, emit_report, iou, mask_figure,
                                   predict_to_classes, run_matrix)
from inpaintseg.masking import DEFAULT_SCHEDULE

from oracles import loop_argmax, loop_iou


def test_iou_identical_and_disjoint():
    lab = np.zeros((4, 4), int)
    lab[1, 1:3] = 1
    assert iou(lab, lab) == 1.0
    other = np.zeros((4, 4), int)
    other[3, 3] = 1
    assert iou(other, lab) == 0.0


def test_iou_hand_case():
    label = np.zeros((4, 4), int)
    label[0, :4] = 1                      # 4 road pixels
    pred = np.zeros((4, 4), int)
    pred[0, :3] = 1                       # 3 of them
    pred[2, 2] = 1                        # one false positive
    assert iou(pred, label) == pytest.approx(0.6)
    assert loop_iou(pred, label, 1) == (3, 5)


def test_iou_undefined_class():
    with pytest.raises(UndefinedIoU):
        iou(np.zeros((2, 2)), np.zeros((2, 2)))
    acc = IoUAccumulator(classes=(1, 2))
    acc.update(np.ones((2, 2)), np.ones((2, 2)))
    rep = acc.report()
    assert rep.undefined_classes == [2] and math.isnan(rep.per_class_iou[2])


def test_predict_binary_ties_to_foreground():
    assert predict_to_classes(torch.zeros(1, 3, 3)).min() == 1
    assert predict_to_classes(torch.full((1, 2, 2), -0.1)).max() == 0
    assert predict_to_classes(torch.zeros(1, 2, 2), threshold=0.6).max() == 0


def test_predict_multiclass_dominant_channel():
    logits = torch.zeros(3, 4, 5)
    logits[2] = 5.0
    assert np.all(predict_to_classes(logits) == 2)


def test_predict_argmax_against_loop():
    rng = np.random.default_rng(0)
    for _ in range(20):
        logits = rng.normal(size=(3, 2, 2))
        assert np.array_equal(predict_to_classes(logits), loop_argmax(logits))


def test_exhaustive_2x2_iou_against_counts():
    grids = [np.array(b).reshape(2, 2) for b in itertools.product((0, 1), repeat=4)]
    for p, t in itertools.product(grids, grids):
        i, u = loop_iou(p, t, 1)
        if u == 0:
            with pytest.raises(UndefinedIoU):
                iou(p, t)
        else:
            assert abs(iou(p, t) - i / u) < 1e-10
            assert iou(p, t) == iou(t, p)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 5), k=st.integers(2, 4))
def test_dataset_iou_equals_pixel_count_oracle(seed, n, k):
    rng = np.random.default_rng(seed)
    pred = rng.integers(0, k, (n, 4, 4))
    lab = rng.integers(0, k, (n, 4, 4))
    acc = IoUAccumulator(classes=range(k))
    for p, t in zip(pred, lab):
        acc.update(p, t)
    rep = acc.report()
    for c in range(k):
        i, u = loop_iou(pred, lab, c)
        assert rep.intersection[c] == i and rep.union[c] == u
        if u:
            assert abs(rep.per_class_iou[c] - i / u) < 1e-10
            assert 0 <= rep.per_class_iou[c] <= 1


def test_iou_monotone_when_adding_correct_pixels():
    rng = np.random.default_rng(3)
    lab = rng.integers(0, 2, (8, 8))
    pred = np.zeros_like(lab)
    pred[0, 0] = 1
    prev = -1.0
    for y, x in zip(*np.nonzero(lab)):
        pred[y, x] = 1
        cur = iou(pred, lab)
        assert cur >= prev
        prev = cur


def test_per_image_mean_reported():
    acc = IoUAccumulator()
    a = np.zeros((2, 2), int)
    a[0, 0] = 1
    acc.update(a, a)                                   # 1.0
    acc.update(np.ones((2, 2), int), a)               # 0.25
    rep = acc.report()
    assert rep.per_class_iou[1] == pytest.approx(2 / 5)
    assert rep.mean_image_iou(1) == pytest.approx(0.625)
    assert "iou" in rep.to_text()


def _report(v):
    return IoUReport([1], {1: int(v * 100)}, {1: 100}, 4)


def test_matrix_cardinality_and_duplicates():
    m = ExperimentMatrix()
    for variant, arm in itertools.product(("full", "half", "quarter"), ("baseline", "full_method")):
        m.add(MatrixRow(variant, "in-domain", arm, 10, _report(0.5)))
    assert len(m) == 6
    with pytest.raises(ValueError):
        m.add(MatrixRow("full", "in-domain", "baseline", 10, _report(0.5)))


def test_matrix_table_round_trip():
    m = ExperimentMatrix()
    m.add(MatrixRow("quarter", "in-domain", "baseline", 64, _report(0.25), seed=0))
    m.add(MatrixRow("quarter", "in-domain", "full_method", 64, _report(0.5), seed=0))
    back = ExperimentMatrix.from_table(m.to_table())
    assert back.mean_iou("quarter", "full_method") == pytest.approx(50.0)
    assert len(m.to_table().strip().splitlines()) == 3


def test_summary_averages_seeds():
    m = ExperimentMatrix()
    for seed, v in enumerate((0.2, 0.4)):
        m.add(MatrixRow("quarter", "in-domain", "baseline", 64, _report(v), seed=seed))
    s = m.summary()
    assert len(s) == 1 and s.rows[0].road_iou() == pytest.approx(30.0)


def test_run_matrix_marks_missing_checkpoints(tmp_path):
    (tmp_path / "ok.ckpt").write_text("x")
    spec = [{"variant": "quarter", "arm": "baseline", "checkpoint": str(tmp_path / "ok.ckpt")},
            {"variant": "quarter", "arm": "no_guided", "checkpoint": str(tmp_path / "gone.ckpt")},
            {"variant": "quarter", "arm": "full_method", "domain": "holdout"}]
    m = run_matrix(spec, lambda row: _report(0.5))
    assert [r.status for r in m.rows] == ["ok", "failed: missing checkpoint", "ok"]
    assert m.rows[2].domain == "holdout"
    assert "failed" in m.to_table()


def test_emit_report_files_agree(tmp_path):
    m = ExperimentMatrix()
    sizes = {"full": 256, "half": 128, "quarter": 64}
    vals = {}
    for (variant, n), arm in itertools.product(sizes.items(), ("baseline", "full_method")):
        v = 0.3 + 0.1 * (arm == "full_method") + n / 1000
        vals[(arm, n)] = 100 * v
        m.add(MatrixRow(variant, "in-domain", arm, n, _report(v)))
    paths = emit_report(m, tmp_path, schedule=DEFAULT_SCHEDULE, canvas=128)
    table = paths["table"].read_text().strip().splitlines()
    assert len(table) == 7
    for line in paths["plot_data"].read_text().strip().splitlines()[1:]:
        domain, arm, n, y = line.split("\t")
        row = next(r for r in m.rows if r.arm == arm and r.train_images == int(n))
        assert float(y) == pytest.approx(row.road_iou(), abs=1e-4)
    assert paths["plot"].stat().st_size > 0 and paths["masks"].stat().st_size > 0


def test_emit_report_single_arm(tmp_path):
    m = ExperimentMatrix([MatrixRow("full", "in-domain", "baseline", 10, _report(0.5))])
    paths = emit_report(m, tmp_path)
    assert len(paths["plot_data"].read_text().strip().splitlines()) == 2
    with pytest.raises(ValueError):
        emit_report(ExperimentMatrix(), tmp_path)


def test_mask_figure_panels(tmp_path):
    from PIL import Image
    mask_figure(DEFAULT_SCHEDULE, tmp_path / "f.png", canvas=64, epochs=(0,))
    assert Image.open(tmp_path / "f.png").size == (64, 64)
    mask_figure(DEFAULT_SCHEDULE, tmp_path / "g.png", canvas=64)
    assert Image.open(tmp_path / "g.png").size[0] > 3 * 64
