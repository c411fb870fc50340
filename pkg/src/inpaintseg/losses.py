"""Reconstruction losses for plain and road-guided inpainting.

Tensors are channel-first: outputs and inputs are ``(C, H, W)`` or
``(N, C, H, W)``; masks are ``(H, W)`` or ``(N, H, W)`` and are broadcast over
the channel axis.  Every MSE averages over all elements of the masked
tensors, zeros included, so the loss scales with the size of the supported
region.  Over a batch this is the mean of the per-sample losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

DEFAULT_W_ID = 0.2
DEFAULT_W_FILL = 0.8


@dataclass(frozen=True)
class LossWeights:
    w_id: float = DEFAULT_W_ID
    w_fill: float = DEFAULT_W_FILL

    def __post_init__(self):
        if not (np.isfinite(self.w_id) and np.isfinite(self.w_fill)):
            raise ValueError("loss weights must be finite")
        if self.w_id < 0 or self.w_fill < 0:
            raise ValueError("loss weights must be non-negative")
        if self.w_id == 0 and self.w_fill == 0:
            raise ValueError("at least one loss weight must be positive")


@dataclass
class LossReport:
    """Loss components of one evaluation.  ``l_total`` keeps its graph so the
    trainer can backpropagate through it."""

    l_id: torch.Tensor
    l_fill: torch.Tensor
    l_total: torch.Tensor
    masked_pixel_count: int
    road_pixel_count: int | None = None

    def values(self) -> tuple[float, float, float]:
        return float(self.l_id), float(self.l_fill), float(self.l_total)


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x))


def _check(output, target, *masks):
    output, target = _as_tensor(output), _as_tensor(target)
    if output.shape != target.shape:
        raise ValueError(f"output {tuple(output.shape)} and input "
                         f"{tuple(target.shape)} differ in shape")
    if output.ndim not in (3, 4):
        raise ValueError("images must be (C, H, W) or (N, C, H, W)")
    out = []
    for m in masks:
        m = _as_tensor(m)
        expected = output.shape[:-3] + output.shape[-2:]
        if tuple(m.shape) != tuple(expected):
            raise ValueError(f"mask shape {tuple(m.shape)} does not match "
                             f"image {tuple(output.shape)}")
        out.append(m.to(output.dtype).unsqueeze(-3))
    return output, target.to(output.dtype), out


def masked_mse(output, target, weight) -> torch.Tensor:
    """MSE(O * W, X * W) over every element, with W broadcast over channels."""
    output, target, (w,) = _check(output, target, weight)
    return ((output * w - target * w) ** 2).mean()


def identity_loss(output, target, mask) -> torch.Tensor:
    """Reproduction error on the kept pixels (mask == 1)."""
    return masked_mse(output, target, mask)


def fill_loss(output, target, mask) -> torch.Tensor:
    """Reconstruction error on the removed pixels (mask == 0)."""
    return masked_mse(output, target, 1 - _as_tensor(mask))


def guided_identity_loss(output, target, mask, road) -> torch.Tensor:
    """Identity loss restricted to road pixels."""
    _check(output, target, mask, road)
    return masked_mse(output, target, _as_tensor(mask) * _as_tensor(road))


def guided_fill_loss(output, target, mask, road) -> torch.Tensor:
    _check(output, target, mask, road)
    return masked_mse(output, target, (1 - _as_tensor(mask)) * _as_tensor(road))


def _report(l_id, l_fill, weights: LossWeights, mask, road=None) -> LossReport:
    mask = _as_tensor(mask)
    return LossReport(
        l_id=l_id,
        l_fill=l_fill,
        l_total=weights.w_id * l_id + weights.w_fill * l_fill,
        masked_pixel_count=int((mask == 0).sum()),
        road_pixel_count=None if road is None else int((_as_tensor(road) != 0).sum()),
    )


def total_inpaint_loss(output, target, mask,
                       weights: LossWeights = LossWeights()) -> LossReport:
    return _report(identity_loss(output, target, mask),
                   fill_loss(output, target, mask), weights, mask)


def total_guided_loss(output, target, mask, road,
                      weights: LossWeights = LossWeights()) -> LossReport:
    return _report(guided_identity_loss(output, target, mask, road),
                   guided_fill_loss(output, target, mask, road), weights, mask, road)


LOG_COLUMNS = ("step", "epoch", "l_id", "l_fill", "l_total", "masked_fraction")


def log_row(report: LossReport, step: int, epoch: int, masked_fraction: float) -> str:
    l_id, l_fill, l_total = report.values()
    return (f"{step}\t{epoch}\t{l_id:.9g}\t{l_fill:.9g}\t{l_total:.9g}\t"
            f"{masked_fraction:.6f}")
