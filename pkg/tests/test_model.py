import numpy as np
import pytest
import torch
import torch.nn as nn

from inpaintseg.model import (ContractViolation, CorruptStateError, HeadAdapter,
                              IncompatibleCheckpoint, InvalidClassCount, ToyUNet, describe,
                              emek_unet_adapter, get_final_layer, head_channels, load_checkpoint,
                              load_model, non_final_parameters, parameter_count, read_checkpoint,
                              save_checkpoint, spin_adapter, to_inpainting_head,
                              to_segmentation_head)


@pytest.fixture
def unet():
    torch.manual_seed(0)
    return ToyUNet(1)


@pytest.mark.parametrize("k", [1, 3, 5])
@pytest.mark.parametrize("size", [64, 97, 130, 256])
def test_forward_shape_contract(k, size):
    model = ToyUNet(k).eval()
    with torch.no_grad():
        out = model(torch.zeros(1, 3, size, size + 6))
    assert out.shape == (1, k, size, size + 6)


def test_forward_shape_at_512():
    with torch.no_grad():
        assert ToyUNet(2).eval()(torch.zeros(1, 3, 512, 512)).shape == (1, 2, 512, 512)


def test_parameter_budget(unet):
    assert parameter_count(unet) < 2_000_000


def test_inpainting_head_preserves_body(unet):
    rgb = to_inpainting_head(unet, seed=1)
    assert head_channels(rgb) == 3 and head_channels(unet) == 1
    before, after = non_final_parameters(unet), non_final_parameters(rgb)
    assert before.keys() == after.keys()
    assert all(torch.equal(before[n], after[n]) for n in before)


def test_rgb_model_needs_no_change():
    torch.manual_seed(2)
    model = ToyUNet(3)
    rgb = to_inpainting_head(model)
    a, b = model.state_dict(), rgb.state_dict()
    assert all(torch.equal(a[n], b[n]) for n in a)


def test_extend_mode_keeps_existing_filters(unet):
    rgb = to_inpainting_head(unet, seed=3, mode="extend")
    old, new = get_final_layer(unet), get_final_layer(rgb)
    assert torch.equal(new.weight[:1], old.weight) and torch.equal(new.bias[:1], old.bias)


def test_round_trip_preserves_body_and_activations(unet):
    unet.eval()
    back = to_segmentation_head(to_inpainting_head(unet, seed=4), 1, seed=5).eval()
    a, b = non_final_parameters(unet), non_final_parameters(back)
    assert all(torch.equal(a[n], b[n]) for n in a)
    x = torch.randn(2, 3, 64, 64, generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        assert torch.equal(unet.features(x), back.features(x))


@pytest.mark.parametrize("k", [1, 3])
def test_segmentation_head_classes(unet, k):
    seg = to_segmentation_head(to_inpainting_head(unet), k)
    assert head_channels(seg) == k


def test_segmentation_head_rejects_zero_classes(unet):
    with pytest.raises(InvalidClassCount):
        to_segmentation_head(unet, 0)


def test_fresh_head_is_seeded(unet):
    a = get_final_layer(to_segmentation_head(unet, 2, seed=7)).weight
    b = get_final_layer(to_segmentation_head(unet, 2, seed=7)).weight
    c = get_final_layer(to_segmentation_head(unet, 2, seed=8)).weight
    assert torch.equal(a, b) and not torch.equal(a, c)


def test_opaque_model_violates_contract():
    with pytest.raises(ContractViolation):
        to_inpainting_head(nn.Sequential(nn.Conv2d(3, 1, 1)))

    class Odd(nn.Module):
        final_layer_name = "act"

        def __init__(self):
            super().__init__()
            self.act = nn.ReLU()

    with pytest.raises(ContractViolation):
        to_inpainting_head(Odd())


def test_adapters_wrap_third_party_networks():
    net = nn.Sequential(nn.Conv2d(3, 8, 3, padding=1), nn.ReLU(), nn.Conv2d(8, 1, 1))
    spin = spin_adapter(net, "2")
    assert spin.head_mode == "extend"
    rgb = to_inpainting_head(spin, seed=0)
    assert rgb(torch.zeros(1, 3, 16, 16)).shape == (1, 3, 16, 16)
    assert torch.equal(rgb.net[0].weight, net[0].weight)
    assert emek_unet_adapter(net, "2").head_mode == "replace"
    with pytest.raises(ContractViolation):
        HeadAdapter(net, "1")


def test_eval_forward_deterministic(unet):
    unet.eval()
    x = torch.randn(1, 3, 64, 64)
    with torch.no_grad():
        assert torch.equal(unet(x), unet(x))


def test_describe_lists_head(unet):
    text = describe(unet)
    assert "head" in text and "1 output channels" in text and "enc1.0.weight" in text


# -- checkpoints ------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, unet):
    save_checkpoint(unet, tmp_path / "c.ckpt", "step3", config_digest="abc")
    clone = ToyUNet(1)
    rep = load_checkpoint(tmp_path / "c.ckpt", clone)
    assert rep.reinitialized == [] and rep.bundle.step_tag == "step3"
    a, b = unet.state_dict(), clone.state_dict()
    assert max(float((a[n].double() - b[n].double()).abs().max()) for n in a) == 0.0
    header = (tmp_path / "c.ckpt").read_bytes().split(b"\n\n", 1)[0].decode()
    assert header.startswith("INPAINTSEG-CKPT v1")
    assert 'step_tag="step3"' in header and "head_channels=1" in header
    assert head_channels(load_model(tmp_path / "c.ckpt")) == 1


def test_checkpoint_refuses_non_finite(tmp_path, unet):
    with torch.no_grad():
        unet.enc1[0].weight[0, 0, 0, 0] = float("nan")
    with pytest.raises(CorruptStateError):
        save_checkpoint(unet, tmp_path / "bad.ckpt", "step1")
    assert not (tmp_path / "bad.ckpt").exists()


def test_checkpoint_rejects_foreign_files(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"hello\n\n")
    with pytest.raises(IncompatibleCheckpoint):
        read_checkpoint(tmp_path / "x.ckpt")
    (tmp_path / "y.ckpt").write_bytes(b"INPAINTSEG-CKPT v9\n\n")
    with pytest.raises(IncompatibleCheckpoint):
        read_checkpoint(tmp_path / "y.ckpt")


def test_step1_bundle_into_rgb_model(tmp_path, unet):
    rgb = to_inpainting_head(unet)
    save_checkpoint(rgb, tmp_path / "s1.ckpt", "step1")
    target = to_inpainting_head(ToyUNet(1), seed=9)
    rep = load_checkpoint(tmp_path / "s1.ckpt", target)
    assert rep.bundle.step_tag == "step1" and not rep.reinitialized
    assert torch.equal(get_final_layer(target).weight, get_final_layer(rgb).weight)


def test_mismatched_head_is_reinitialised(tmp_path, unet):
    rgb = to_inpainting_head(unet, seed=1)
    save_checkpoint(rgb, tmp_path / "s2.ckpt", "step2")
    target = ToyUNet(1)
    with pytest.warns(UserWarning, match="reinitialised"):
        rep = load_checkpoint(tmp_path / "s2.ckpt", target)
    assert sorted(rep.reinitialized) == ["head.bias", "head.weight"]
    a, b = non_final_parameters(rgb), non_final_parameters(target)
    assert all(torch.equal(a[n], b[n]) for n in a)


def test_incompatible_checkpoints(tmp_path, unet):
    save_checkpoint(unet, tmp_path / "c.ckpt", "step3")

    class Other(nn.Module):
        final_layer_name = "out"

        def __init__(self):
            super().__init__()
            self.out = nn.Conv2d(4, 1, 1)

    with pytest.raises(IncompatibleCheckpoint):
        load_checkpoint(tmp_path / "c.ckpt", Other())
    with pytest.raises(IncompatibleCheckpoint, match="shape conflict"):
        load_checkpoint(tmp_path / "c.ckpt", ToyUNet(1, base_channels=8))


def test_bundle_digest_is_content_hash(tmp_path, unet):
    b1 = save_checkpoint(unet, tmp_path / "a.ckpt", "step1")
    b2 = read_checkpoint(tmp_path / "a.ckpt")
    assert b1.digest == b2.digest
    np.testing.assert_array_equal(b1.parameters["head.weight"], b2.parameters["head.weight"])
