"""Overlapping crop grids and FiveCrop."""

from __future__ import annotations

import numpy as np


class InvalidStride(ValueError):
    pass


def _axis_offsets(size: int, crop: int, stride: int) -> list[int]:
    offsets = list(range(0, size - crop + 1, stride))
    if offsets[-1] != size - crop:
        # flush final tile against the far edge
        offsets.append(size - crop)
    return offsets


def crop_tiles(source_size, crop: int, overlap: int) -> list[tuple[int, int]]:
    """Top-left (row, col) offsets of ``crop`` x ``crop`` tiles.

    Tiles advance by ``crop - overlap``.  When the stride does not divide the
    remaining extent a last tile flush with the far border is added, so the
    whole source is always covered.
    """
    h, w = (source_size, source_size) if np.isscalar(source_size) else source_size
    if overlap < 0 or overlap >= crop:
        raise InvalidStride(f"overlap must lie in [0, crop), got {overlap} for crop {crop}")
    if crop > h or crop > w:
        raise ValueError(f"crop {crop} larger than source {h}x{w}")
    stride = crop - overlap
    return [(r, c) for r in _axis_offsets(h, crop, stride)
            for c in _axis_offsets(w, crop, stride)]


def five_crop_offsets(height: int, width: int, crop: int) -> list[tuple[int, int]]:
    if crop > height or crop > width:
        raise ValueError(f"crop {crop} larger than image {height}x{width}")
    return [(0, 0), (0, width - crop), (height - crop, 0), (height - crop, width - crop),
            ((height - crop) // 2, (width - crop) // 2)]


def five_crop(image: np.ndarray, crop: int) -> list[np.ndarray]:
    """Four corner crops followed by the centre crop."""
    h, w = image.shape[:2]
    return [image[r:r + crop, c:c + crop] for r, c in five_crop_offsets(h, w, crop)]
