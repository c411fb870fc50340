import itertools

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from inpaintseg import losses
from inpaintseg.losses import (LossWeights, fill_loss, guided_fill_loss, guided_identity_loss,
                               identity_loss, total_guided_loss, total_inpaint_loss)

from oracles import loop_mse

X = torch.tensor([[[1.0, 2.0], [3.0, 4.0]]], dtype=torch.float64)
O = torch.tensor([[[1.0, 0.0], [3.0, 0.0]]], dtype=torch.float64)
M = torch.tensor([[1, 0], [0, 1]])
S = torch.tensor([[1, 1], [0, 0]])


# same case with the bottom-left output pixel also zeroed
O_ZERO = torch.tensor([[[1.0, 0.0], [0.0, 0.0]]], dtype=torch.float64)


def test_hand_case_identity_and_fill():
    # complement mask keeps (0,1) and (1,0): residuals 0-2 and 3-3
    assert float(identity_loss(O, X, M)) == 4.0
    assert float(fill_loss(O, X, M)) == 1.0
    assert loop_mse(O.numpy(), X.numpy(), M.numpy()) == 4.0
    assert loop_mse(O.numpy(), X.numpy(), 1 - M.numpy()) == 1.0
    assert float(identity_loss(O_ZERO, X, M)) == 4.0
    assert float(fill_loss(O_ZERO, X, M)) == 3.25
    assert loop_mse(O_ZERO.numpy(), X.numpy(), 1 - M.numpy()) == 3.25


def test_hand_case_total():
    rep = total_inpaint_loss(O_ZERO, X, M, LossWeights(0.2, 0.8))
    assert float(rep.l_total) == pytest.approx(0.2 * 4.0 + 0.8 * 3.25, abs=1e-12)
    assert float(rep.l_total) == pytest.approx(3.4, abs=1e-12)
    assert rep.masked_pixel_count == 2
    rep = total_inpaint_loss(O, X, M, LossWeights(0.2, 0.8))
    assert float(rep.l_total) == pytest.approx(1.6, abs=1e-12)
    rep = total_inpaint_loss(O, X, M, LossWeights(1, 0))
    assert float(rep.l_total) == float(rep.l_id)


def test_hand_case_guided():
    # M*S = [[1,0],[0,0]] -> residual 0; (1-M)*S = [[0,1],[0,0]] -> (0-2)^2 / 4
    assert float(guided_identity_loss(O, X, M, S)) == 0.0
    assert float(guided_fill_loss(O, X, M, S)) == 1.0
    assert loop_mse(O.numpy(), X.numpy(), (M * S).numpy()) == 0.0
    assert loop_mse(O.numpy(), X.numpy(), ((1 - M) * S).numpy()) == 1.0
    rep = total_guided_loss(O, X, M, S)
    assert float(rep.l_total) == pytest.approx(0.2 * 0.0 + 0.8 * 1.0, abs=1e-12)
    assert rep.road_pixel_count == 2


def test_perfect_reproduction_is_zero():
    x = torch.randn(2, 3, 5, 5, dtype=torch.float64)
    m = torch.randint(0, 2, (2, 5, 5))
    s = torch.randint(0, 2, (2, 5, 5))
    assert total_inpaint_loss(x, x, m).values() == (0.0, 0.0, 0.0)
    assert total_guided_loss(x, x, m, s).values() == (0.0, 0.0, 0.0)


def test_unit_residual():
    x = torch.randn(3, 9, 4, dtype=torch.float64)
    assert float(identity_loss(x + 1, x, torch.ones(9, 4))) == pytest.approx(1.0, abs=1e-12)


def test_nothing_masked_means_no_fill_loss():
    x, o = torch.randn(3, 4, 4), torch.randn(3, 4, 4)
    assert float(fill_loss(o, x, torch.ones(4, 4))) == 0.0
    assert float(guided_fill_loss(o, x, torch.ones(4, 4), torch.ones(4, 4))) == 0.0


def test_road_free_guided_losses_vanish():
    x, o = torch.randn(3, 4, 4), torch.randn(3, 4, 4)
    m = torch.randint(0, 2, (4, 4))
    z = torch.zeros(4, 4)
    assert float(guided_identity_loss(o, x, m, z)) == 0.0
    assert float(guided_fill_loss(o, x, m, z)) == 0.0


def test_shape_errors():
    with pytest.raises(ValueError):
        identity_loss(torch.zeros(3, 4, 4), torch.zeros(3, 4, 5), torch.ones(4, 4))
    with pytest.raises(ValueError):
        identity_loss(torch.zeros(3, 4, 4), torch.zeros(3, 4, 4), torch.ones(4, 5))
    with pytest.raises(ValueError):
        guided_identity_loss(torch.zeros(3, 4, 4), torch.zeros(3, 4, 4), torch.ones(4, 4),
                             torch.ones(3, 3))


@pytest.mark.parametrize("w", [(-1, 1), (0, 0), (float("nan"), 1)])
def test_bad_weights(w):
    with pytest.raises(ValueError):
        LossWeights(*w)


def test_batch_mean_equals_mean_of_samples():
    o, x = torch.randn(4, 3, 6, 6, dtype=torch.float64), torch.randn(4, 3, 6, 6, dtype=torch.float64)
    m = torch.randint(0, 2, (4, 6, 6))
    batch = identity_loss(o, x, m)
    each = torch.stack([identity_loss(o[i], x[i], m[i]) for i in range(4)]).mean()
    assert float(batch) == pytest.approx(float(each), abs=1e-14)


def test_numpy_inputs_accepted():
    assert float(identity_loss(O.numpy(), X.numpy(), M.numpy())) == 4.0


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), c=st.integers(1, 3), h=st.integers(1, 4), w=st.integers(1, 4))
def test_symmetry_and_reduction(seed, c, h, w):
    g = torch.Generator().manual_seed(seed)
    o = torch.randn(c, h, w, generator=g, dtype=torch.float64)
    x = torch.randn(c, h, w, generator=g, dtype=torch.float64)
    m = torch.randint(0, 2, (h, w), generator=g)
    s = torch.randint(0, 2, (h, w), generator=g)
    for fn in (identity_loss, fill_loss):
        assert float(fn(o, x, m)) == float(fn(x, o, m))
        assert float(fn(o, x, m)) >= 0
    for fn in (guided_identity_loss, guided_fill_loss):
        assert float(fn(o, x, m, s)) == float(fn(x, o, m, s))
    ones = torch.ones(h, w, dtype=torch.int64)
    assert float(guided_identity_loss(o, x, m, ones)) == float(identity_loss(o, x, m))
    assert float(guided_fill_loss(o, x, m, ones)) == float(fill_loss(o, x, m))


def test_exhaustive_2x2_against_loops():
    rng = np.random.default_rng(4)
    o, x = rng.normal(size=(3, 2, 2)), rng.normal(size=(3, 2, 2))
    grids = [np.array(bits).reshape(2, 2) for bits in itertools.product((0, 1), repeat=4)]
    for m in grids:
        assert abs(float(identity_loss(o, x, m)) - loop_mse(o, x, m)) < 1e-10
        assert abs(float(fill_loss(o, x, m)) - loop_mse(o, x, 1 - m)) < 1e-10
        for s in grids:
            assert abs(float(guided_identity_loss(o, x, m, s)) - loop_mse(o, x, m * s)) < 1e-10
            assert abs(float(guided_fill_loss(o, x, m, s))
                       - loop_mse(o, x, (1 - m) * s)) < 1e-10


def test_gradient_support():
    o = torch.randn(3, 4, 4, dtype=torch.float64, requires_grad=True)
    x = torch.randn(3, 4, 4, dtype=torch.float64)
    m = torch.randint(0, 2, (4, 4))
    s = torch.randint(0, 2, (4, 4))
    (g_id,) = torch.autograd.grad(identity_loss(o, x, m), o)
    (g_fill,) = torch.autograd.grad(fill_loss(o, x, m), o)
    (g_gid,) = torch.autograd.grad(guided_identity_loss(o, x, m, s), o)
    (g_gfill,) = torch.autograd.grad(guided_fill_loss(o, x, m, s), o)
    assert torch.all(g_id[:, m == 0] == 0)
    assert torch.all(g_fill[:, m == 1] == 0)
    assert torch.all(g_gid[:, (m * s) == 0] == 0)
    assert torch.all(g_gfill[:, ((1 - m) * s) == 0] == 0)


def test_log_row_format():
    rep = total_inpaint_loss(O, X, M)
    row = losses.log_row(rep, 7, 2, 0.5).split("\t")
    assert len(row) == len(losses.LOG_COLUMNS)
    assert row[:2] == ["7", "2"] and float(row[2]) == 4.0
