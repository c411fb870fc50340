"""Flip/rotate augmentation and per-channel normalisation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Transform:
    mirror: bool = False   # left-right
    flip: bool = False     # top-bottom
    rot90: int = 0         # counter-clockwise quarter turns, applied last


ALL_TRANSFORMS = tuple(Transform(m, f, k) for m in (False, True)
                       for f in (False, True) for k in range(4))


def sample_transform(seed) -> Transform:
    rng = np.random.default_rng(seed)
    mirror, flip = rng.integers(0, 2, size=2)
    return Transform(bool(mirror), bool(flip), int(rng.integers(0, 4)))


def apply_transform(array: np.ndarray, t: Transform) -> np.ndarray:
    out = array
    if t.mirror:
        out = out[:, ::-1]
    if t.flip:
        out = out[::-1]
    if t.rot90:
        out = np.rot90(out, t.rot90, axes=(0, 1))
    return np.ascontiguousarray(out)


def augment(image: np.ndarray, label: np.ndarray | None = None, seed=0):
    """Apply one random mirror/flip/rotation draw to image and label alike."""
    if label is not None and label.shape[:2] != image.shape[:2]:
        raise ValueError("label and image differ in spatial size")
    t = sample_transform(seed)
    return apply_transform(image, t), None if label is None else apply_transform(label, t)


class InvalidStats(ValueError):
    pass


def _stats(mean, std, channels):
    mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), (channels,))
    std = np.broadcast_to(np.asarray(std, dtype=np.float64), (channels,))
    if np.any(std <= 0):
        raise InvalidStats(f"std must be positive, got {std}")
    return mean, std


def normalize(image: np.ndarray, mean, std) -> np.ndarray:
    """(x / 255 - mean) / std per channel, for an 8-bit ``(..., C)`` image."""
    mean, std = _stats(mean, std, image.shape[-1])
    return ((np.asarray(image, dtype=np.float64) / 255.0 - mean) / std).astype(np.float32)


def denormalize(image: np.ndarray, mean, std) -> np.ndarray:
    mean, std = _stats(mean, std, image.shape[-1])
    return (np.asarray(image, dtype=np.float64) * std + mean) * 255.0


def channel_stats(images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std of 8-bit ``(N, H, W, C)`` images on the 0-1 scale."""
    x = np.asarray(images, dtype=np.float64) / 255.0
    axes = tuple(range(x.ndim - 1))
    return x.mean(axis=axes), x.std(axis=axes)
