"""Segmentation model contract, head swaps and checkpoint transfer.

Any ``nn.Module`` can take part in the three training steps as long as it
maps ``(N, 3, H, W)`` to ``(N, K, H, W)`` and names its final layer through a
``final_layer_name`` attribute (a dotted path to a 1x1 ``nn.Conv2d``).  The
shipped :class:`ToyUNet` satisfies this directly; third-party networks are
wrapped with :class:`HeadAdapter`.
"""

from __future__ import annotations

import copy
import hashlib
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

RGB_CHANNELS = 3
CHECKPOINT_MAGIC = "INPAINTSEG-CKPT"
CHECKPOINT_VERSION = 1
STEP_TAGS = ("step1", "step2", "step3")


class ContractViolation(TypeError):
    """The model does not expose what the training steps need."""


class InvalidClassCount(ValueError):
    pass


class CorruptStateError(RuntimeError):
    """Refusing to persist or load non-finite parameters."""


class IncompatibleCheckpoint(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Reference model
# ---------------------------------------------------------------------------


def _double_conv(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class ToyUNet(nn.Module):
    """Three-level U-Net with skip connections at every level.

    With the default 16 base channels the network has roughly 120k
    parameters, small enough to train on a CPU.
    """

    final_layer_name = "head"

    def __init__(self, out_channels: int = 1, in_channels: int = 3,
                 base_channels: int = 16, head_mode: str = "replace"):
        super().__init__()
        if out_channels < 1:
            raise InvalidClassCount(f"out_channels must be >= 1, got {out_channels}")
        c1, c2, c3 = base_channels, 2 * base_channels, 4 * base_channels
        self.enc1 = _double_conv(in_channels, c1)
        self.enc2 = _double_conv(c1, c2)
        self.bottleneck = _double_conv(c2, c3)
        self.up2 = nn.ConvTranspose2d(c3, c2, 2, stride=2)
        self.dec2 = _double_conv(2 * c2, c2)
        self.up1 = nn.ConvTranspose2d(c2, c1, 2, stride=2)
        self.dec1 = _double_conv(2 * c1, c1)
        self.head = nn.Conv2d(c1, out_channels, 1)
        self.head_mode = head_mode

    @staticmethod
    def _merge(up: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        dh = skip.shape[-2] - up.shape[-2]
        dw = skip.shape[-1] - up.shape[-1]
        if dh or dw:
            up = F.pad(up, [dw // 2, dw - dw // 2, dh // 2, dh - dh // 2])
        return torch.cat([skip, up], dim=1)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Activations entering the final layer."""
        e1 = self.enc1(x)
        e2 = self.enc2(F.max_pool2d(e1, 2))
        b = self.bottleneck(F.max_pool2d(e2, 2))
        d2 = self.dec2(self._merge(self.up2(b), e2))
        return self.dec1(self._merge(self.up1(d2), e1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))


class HeadAdapter(nn.Module):
    """Wraps an arbitrary segmentation network so its head can be swapped.

    ``head_path`` is the dotted attribute path of the network's last 1x1
    convolution.  ``head_mode='extend'`` appends RGB filters to the existing
    output channels (the SPIN-style modification); ``'replace'`` swaps the
    layer wholesale.
    """

    def __init__(self, net: nn.Module, head_path: str, head_mode: str = "replace"):
        super().__init__()
        self.net = net
        self.final_layer_name = f"net.{head_path}"
        self.head_mode = head_mode
        get_final_layer(self)

    def forward(self, x):
        return self.net(x)


def spin_adapter(net: nn.Module, head_path: str) -> HeadAdapter:
    """SPIN RoadMapper hook: the segmentation branch's last conv is extended.

    The network itself is not shipped; pass an instance built from its public
    code together with the attribute path of the segmentation-branch output
    convolution.
    """
    return HeadAdapter(net, head_path, head_mode="extend")


def emek_unet_adapter(net: nn.Module, head_path: str) -> HeadAdapter:
    """EmekU-Net hook.  The three-class head already emits three channels,
    so the inpainting steps reuse it unchanged."""
    return HeadAdapter(net, head_path, head_mode="replace")


# ---------------------------------------------------------------------------
# Head swaps
# ---------------------------------------------------------------------------


def get_final_layer(model: nn.Module) -> nn.Conv2d:
    path = getattr(model, "final_layer_name", None)
    if not path:
        raise ContractViolation(
            f"{type(model).__name__} does not declare final_layer_name")
    try:
        layer = model.get_submodule(path)
    except AttributeError as exc:
        raise ContractViolation(f"final layer {path!r} not found") from exc
    if not isinstance(layer, nn.Conv2d):
        raise ContractViolation(
            f"final layer {path!r} is {type(layer).__name__}, expected Conv2d")
    return layer


def head_channels(model: nn.Module) -> int:
    return get_final_layer(model).out_channels


def _set_final_layer(model: nn.Module, layer: nn.Conv2d) -> None:
    parent_path, _, name = model.final_layer_name.rpartition(".")
    parent = model.get_submodule(parent_path) if parent_path else model
    setattr(parent, name, layer)


def fresh_head(like: nn.Conv2d, out_channels: int, seed: int) -> nn.Conv2d:
    """A new final layer with seeded Kaiming fan-in initialisation."""
    layer = nn.Conv2d(like.in_channels, out_channels, like.kernel_size,
                      stride=like.stride, padding=like.padding,
                      bias=like.bias is not None)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        nn.init.kaiming_normal_(layer.weight, mode="fan_in",
                                nonlinearity="linear", generator=gen)
        if layer.bias is not None:
            bound = 1.0 / math.sqrt(like.in_channels * math.prod(like.kernel_size))
            layer.bias.uniform_(-bound, bound, generator=gen)
    return layer.to(like.weight.device, like.weight.dtype)


def to_inpainting_head(model: nn.Module, seed: int = 0,
                       mode: str | None = None) -> nn.Module:
    """Return a copy of ``model`` whose final layer predicts RGB.

    A model that already emits three channels is returned as an unchanged
    copy.  In ``extend`` mode the existing output filters are kept and new
    ones appended until there are three.
    """
    old = get_final_layer(model)
    mode = mode or getattr(model, "head_mode", "replace")
    if mode not in ("replace", "extend"):
        raise ValueError(f"unknown head mode {mode!r}")
    out = copy.deepcopy(model)
    k = old.out_channels
    if k == RGB_CHANNELS:
        return out
    if mode == "extend" and k < RGB_CHANNELS:
        new = fresh_head(old, RGB_CHANNELS, seed)
        with torch.no_grad():
            new.weight[:k] = old.weight
            if new.bias is not None:
                new.bias[:k] = old.bias
    else:
        new = fresh_head(old, RGB_CHANNELS, seed)
    _set_final_layer(out, new)
    return out


def to_segmentation_head(model: nn.Module, num_classes: int, seed: int = 0) -> nn.Module:
    """Return a copy of ``model`` with a freshly initialised K-class head.

    Everything but the final layer is carried over untouched.
    """
    if num_classes < 1:
        raise InvalidClassCount(f"num_classes must be >= 1, got {num_classes}")
    old = get_final_layer(model)
    out = copy.deepcopy(model)
    _set_final_layer(out, fresh_head(old, num_classes, seed))
    return out


def non_final_parameters(model: nn.Module) -> dict[str, torch.Tensor]:
    prefix = model.final_layer_name + "."
    return {n: p for n, p in model.state_dict().items() if not n.startswith(prefix)}


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def describe(model: nn.Module) -> str:
    lines = [f"model: {type(model).__name__}",
             f"final layer: {model.final_layer_name} "
             f"({head_channels(model)} output channels, "
             f"mode={getattr(model, 'head_mode', 'replace')})",
             f"parameters: {parameter_count(model)}"]
    for name, p in model.named_parameters():
        lines.append(f"  {name:40s} {tuple(p.shape)}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@dataclass
class CheckpointBundle:
    parameters: dict[str, np.ndarray]
    step_tag: str
    head_channels: int
    config_digest: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        return state_digest(self.parameters)


@dataclass
class LoadReport:
    transferred: list[str]
    reinitialized: list[str]
    bundle: CheckpointBundle


def state_digest(params: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name])
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()[:16]


def bundle_from_model(model: nn.Module, step_tag: str, config_digest: str = "",
                      extra: dict | None = None) -> CheckpointBundle:
    if step_tag not in STEP_TAGS:
        raise ValueError(f"step_tag must be one of {STEP_TAGS}, got {step_tag!r}")
    params = {n: t.detach().cpu().numpy().copy() for n, t in model.state_dict().items()}
    bad = [n for n, a in params.items()
           if np.issubdtype(a.dtype, np.floating) and not np.isfinite(a).all()]
    if bad:
        raise CorruptStateError(f"non-finite values in {', '.join(bad)}")
    return CheckpointBundle(params, step_tag, head_channels(model), config_digest,
                            dict(extra or {}))


def save_checkpoint(model: nn.Module, path: str | Path, step_tag: str,
                    config_digest: str = "", extra: dict | None = None) -> CheckpointBundle:
    """Write ``model`` to ``path``: a text header, a blank line, then an npz
    payload of named tensors."""
    bundle = bundle_from_model(model, step_tag, config_digest, extra)
    write_bundle(bundle, path)
    return bundle


def write_bundle(bundle: CheckpointBundle, path: str | Path) -> None:
    header = {
        "step_tag": bundle.step_tag,
        "head_channels": bundle.head_channels,
        "config_digest": bundle.config_digest,
        "digest": bundle.digest,
        "final_layer": bundle.extra.get("final_layer", "head"),
        "extra": bundle.extra,
    }
    payload = io.BytesIO()
    np.savez(payload, **bundle.parameters)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}\n".encode())
        for key, value in header.items():
            fh.write(f"{key}={json.dumps(value)}\n".encode())
        fh.write(b"\n")
        fh.write(payload.getvalue())


def read_checkpoint(path: str | Path) -> CheckpointBundle:
    with open(path, "rb") as fh:
        first = fh.readline().decode().strip()
        magic, _, version = first.partition(" ")
        if magic != CHECKPOINT_MAGIC:
            raise IncompatibleCheckpoint(f"{path} is not a checkpoint file")
        if version != f"v{CHECKPOINT_VERSION}":
            raise IncompatibleCheckpoint(f"unsupported checkpoint version {version}")
        header = {}
        while True:
            line = fh.readline().decode()
            if not line.strip():
                break
            key, _, value = line.rstrip("\n").partition("=")
            header[key] = json.loads(value)
        with np.load(io.BytesIO(fh.read())) as npz:
            params = {k: npz[k] for k in npz.files}
    bundle = CheckpointBundle(params, header["step_tag"], int(header["head_channels"]),
                              header.get("config_digest", ""), header.get("extra", {}))
    if header.get("digest") and header["digest"] != bundle.digest:
        raise CorruptStateError(f"{path}: parameter digest mismatch")
    return bundle


def load_checkpoint(source: str | Path | CheckpointBundle, target: nn.Module,
                    seed: int = 0) -> LoadReport:
    """Copy name-matched tensors from a checkpoint into ``target`` in place.

    A final layer whose shape differs from the checkpoint's is left with a
    fresh seeded initialisation and reported; a shape conflict anywhere else
    is an error.
    """
    bundle = source if isinstance(source, CheckpointBundle) else read_checkpoint(source)
    state = target.state_dict()
    overlap = set(state) & set(bundle.parameters)
    if not overlap:
        raise IncompatibleCheckpoint("checkpoint shares no parameter names with the target")
    head_prefix = target.final_layer_name + "."
    transferred: list[str] = []
    reinit: list[str] = []
    head_mismatch = False
    for name, tensor in state.items():
        src = bundle.parameters.get(name)
        if src is not None and tuple(src.shape) == tuple(tensor.shape):
            state[name] = torch.from_numpy(np.array(src)).to(tensor.dtype)
            transferred.append(name)
        elif name.startswith(head_prefix):
            head_mismatch = True
        elif src is not None:
            raise IncompatibleCheckpoint(
                f"shape conflict for {name}: checkpoint {tuple(src.shape)} "
                f"vs model {tuple(tensor.shape)}")
        else:
            reinit.append(name)
    target.load_state_dict(state)
    if head_mismatch:
        old = get_final_layer(target)
        _set_final_layer(target, fresh_head(old, old.out_channels, seed))
        head_names = [n for n in state if n.startswith(head_prefix)]
        transferred = [n for n in transferred if n not in head_names]
        reinit.extend(head_names)
        warnings.warn(
            f"checkpoint head has {bundle.head_channels} channels, model expects "
            f"{head_channels(target)}; final layer reinitialised", stacklevel=2)
    return LoadReport(transferred, reinit, bundle)


def load_model(path: str | Path, **kwargs) -> ToyUNet:
    """Instantiate a ToyUNet matching a checkpoint and load it."""
    bundle = read_checkpoint(path)
    base = bundle.parameters["enc1.0.weight"].shape[0]
    model = ToyUNet(out_channels=bundle.head_channels, base_channels=base, **kwargs)
    load_checkpoint(bundle, model)
    return model


def same_parameters(a: dict[str, torch.Tensor], b: dict[str, torch.Tensor],
                    names: Iterable[str] | None = None) -> bool:
    names = list(a) if names is None else list(names)
    return all(torch.equal(a[n], b[n]) for n in names)
