import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from inpaintseg import masking
from inpaintseg.masking import (DEFAULT_SCHEDULE, InvalidMaskSpec, InvalidSchedule, MaskSchedule,
                                MaskSpec, apply_mask, generate_mask, masked_fraction,
                                sample_corners, schedule_at)

from oracles import paint_squares

TABLE_I = [(0, 100, 10), (10, 70, 12), (20, 52, 14), (30, 50, 15), (40, 25, 20), (50, 11, 30)]


@pytest.mark.parametrize("epoch, expected", [(0, (100, 10)), (50, (11, 30)),
                                             (35, (50, 15)), (500, (11, 30)),
                                             (9, (100, 10)), (10, (70, 12))])
def test_schedule_at(epoch, expected):
    assert schedule_at(DEFAULT_SCHEDULE, epoch) == expected


def test_default_schedule_rows():
    rows = [(m.epoch, m.cluster_count, m.cluster_size) for m in DEFAULT_SCHEDULE.milestones]
    assert rows == TABLE_I
    assert DEFAULT_SCHEDULE.raw_budget()[0] == 10_000
    assert DEFAULT_SCHEDULE.raw_budget()[-1] == 9_900


def test_schedule_text_round_trip():
    assert MaskSchedule.from_text(DEFAULT_SCHEDULE.to_text()) == DEFAULT_SCHEDULE


@pytest.mark.parametrize("rows", [
    [(1, 10, 5)],                       # no milestone at epoch 0
    [(0, 10, 5), (0, 8, 6)],            # epochs not increasing
    [(0, 10, 5), (5, 12, 6)],           # count grows
    [(0, 10, 5), (5, 8, 4)],            # size shrinks
])
def test_invalid_schedules(rows):
    with pytest.raises(InvalidSchedule):
        MaskSchedule.from_rows(rows)


def test_schedule_negative_epoch():
    with pytest.raises(ValueError):
        schedule_at(DEFAULT_SCHEDULE, -1)


def test_rescaled_desk_schedule():
    sched = DEFAULT_SCHEDULE.rescaled(epoch_factor=0.1, size_factor=96 / 512)
    rows = [(m.epoch, m.cluster_count, m.cluster_size) for m in sched.milestones]
    assert rows == [(0, 100, 2), (1, 70, 2), (2, 52, 3), (3, 50, 3), (4, 25, 4), (5, 11, 6)]


@given(st.integers(0, 200))
def test_schedule_monotone(epoch):
    n0, s0 = schedule_at(DEFAULT_SCHEDULE, epoch)
    n1, s1 = schedule_at(DEFAULT_SCHEDULE, epoch + 1)
    assert s1 >= s0 and n1 <= n0


def test_generate_mask_empty():
    m = generate_mask(512, 512, MaskSpec(0, 10, seed=3))
    assert m.shape == (512, 512) and m.min() == 1
    assert masked_fraction(m) == 0.0


def test_generate_mask_single_square():
    m = generate_mask(512, 512, MaskSpec(1, 10, seed=11))
    assert np.count_nonzero(m == 0) == 100
    rows, cols = np.nonzero(m == 0)
    assert rows.max() - rows.min() == 9 and cols.max() - cols.min() == 9


def test_generate_mask_matches_rasterizer():
    spec = MaskSpec(100, 10, seed=5)
    m = generate_mask(512, 512, spec)
    corners = sample_corners(512, 512, spec)
    assert np.array_equal(m, paint_squares(512, 512, corners, 10))
    assert 100 <= np.count_nonzero(m == 0) <= 10_000


def test_generate_mask_rejects_big_clusters():
    with pytest.raises(InvalidMaskSpec):
        generate_mask(20, 40, MaskSpec(1, 21))


def test_masked_fraction_extremes():
    assert masked_fraction(np.ones((8, 8), np.uint8)) == 0.0
    assert masked_fraction(np.zeros((8, 8), np.uint8)) == 1.0


def test_masked_fraction_final_milestone_bound():
    spec = MaskSpec(11, 30, seed=0)
    m = generate_mask(512, 512, spec)
    exact = paint_squares(512, 512, sample_corners(512, 512, spec), 30)
    assert masked_fraction(m) == pytest.approx(np.mean(exact == 0))
    assert masked_fraction(m) <= 11 * 900 / 262144


def test_apply_mask_definition():
    img = np.full((2, 2, 3), 0.5)
    out = apply_mask(img, np.array([[1, 0], [0, 1]]))
    assert np.all(out[0, 0] == 0.5) and np.all(out[1, 1] == 0.5)
    assert np.all(out[0, 1] == 0) and np.all(out[1, 0] == 0)
    assert np.all(img == 0.5)


def test_apply_mask_identity_and_zero():
    rng = np.random.default_rng(0)
    img = rng.normal(size=(5, 7, 3))
    assert np.array_equal(apply_mask(img, np.ones((5, 7))), img)
    assert not apply_mask(img, np.zeros((5, 7))).any()


def test_apply_mask_shape_error():
    with pytest.raises(ValueError):
        apply_mask(np.zeros((4, 4, 3)), np.ones((4, 5)))


def test_apply_mask_torch():
    img = torch.ones(3, 3, 2)
    m = torch.tensor([[1, 0, 1], [0, 1, 0], [1, 1, 1]])
    assert torch.equal(apply_mask(img, m)[..., 0], m.float())


@settings(max_examples=60, deadline=None)
@given(h=st.integers(4, 40), w=st.integers(4, 40), count=st.integers(0, 30),
       size=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_mask_invariants(h, w, count, size, seed):
    spec = MaskSpec(count, size, seed)
    m = generate_mask(h, w, spec)
    assert set(np.unique(m)) <= {0, 1}
    assert masked_fraction(m) <= count * size * size / (h * w) + 1e-12
    assert np.array_equal(m, paint_squares(h, w, sample_corners(h, w, spec), size))
    assert np.array_equal(m, generate_mask(h, w, MaskSpec(count, size, seed)))
    x = np.random.default_rng(seed).normal(size=(h, w, 2))
    once = apply_mask(x, m)
    assert np.array_equal(apply_mask(once, m), once)


def test_fraction_equality_without_overlap():
    corners = sample_corners(64, 64, MaskSpec(3, 4, seed=1))
    m = paint_squares(64, 64, corners, 4)
    overlap = len({(r + i, c + j) for r, c in corners
                   for i in range(4) for j in range(4)}) < 48
    assert (masked_fraction(m) == 48 / 4096) == (not overlap)


def test_derived_seeds_are_distinct_and_stable():
    a = generate_mask(32, 32, MaskSpec(5, 3, masking.derive_seed(1, 0, 0, 0)))
    b = generate_mask(32, 32, MaskSpec(5, 3, masking.derive_seed(1, 0, 0, 0)))
    c = generate_mask(32, 32, MaskSpec(5, 3, masking.derive_seed(1, 0, 0, 1)))
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_png_round_trip(tmp_path):
    m = generate_mask(40, 30, MaskSpec(4, 5, seed=2))
    masking.save_mask_png(m, tmp_path / "m.png")
    from PIL import Image
    assert set(np.unique(np.asarray(Image.open(tmp_path / "m.png")))) <= {0, 255}
    assert np.array_equal(masking.load_mask_png(tmp_path / "m.png"), m)
