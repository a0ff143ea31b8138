"""Overlapped patch extraction, stitching, and paired augmentation."""

from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np


class Patch(NamedTuple):
    data: np.ndarray
    origin: tuple  # (row, col) of the top-left pixel


def grid_origins(n: int, size: int, stride: int) -> list[int]:
    if n <= size:
        return [0]
    starts = list(range(0, n - size + 1, stride))
    if starts[-1] + size < n:
        starts.append(n - size)
    return starts


def extract_patches(image: np.ndarray, size: int, overlap: int = 0) -> list[Patch]:
    """Regular grid with stride ``size - overlap``; the last row/column is shifted
    inward so every pixel is covered. Images smaller than ``size`` become one
    edge-padded patch (a warning is emitted)."""
    if not size > overlap >= 0:
        raise ValueError("need size > overlap >= 0")
    image = np.asarray(image)
    H, W = image.shape[-2:]
    if H < size or W < size:
        warnings.warn(f"image {H}x{W} smaller than patch size {size}; padding", stacklevel=2)
        pad = [(0, 0)] * (image.ndim - 2) + [(0, max(0, size - H)), (0, max(0, size - W))]
        image = np.pad(image, pad, mode="edge")
        H, W = image.shape[-2:]
    stride = size - overlap
    return [Patch(image[..., r:r + size, c:c + size].copy(), (r, c))
            for r in grid_origins(H, size, stride) for c in grid_origins(W, size, stride)]


def stitch_patches(patches, full_size) -> np.ndarray:
    """Average overlapping patches back into a ``full_size`` (H, W) image."""
    H, W = full_size
    if not patches:
        raise ValueError("no patches to stitch")
    lead = np.asarray(patches[0][0]).shape[:-2]
    acc_shape = lead + (max(H, max(p[1][0] + np.shape(p[0])[-2] for p in patches)),
                        max(W, max(p[1][1] + np.shape(p[0])[-1] for p in patches)))
    acc = np.zeros(acc_shape, dtype=np.float64)
    cnt = np.zeros(acc_shape[-2:], dtype=np.float64)
    for data, (r, c) in patches:
        h, w = np.shape(data)[-2:]
        acc[..., r:r + h, c:c + w] += data
        cnt[r:r + h, c:c + w] += 1
    if np.any(cnt[:H, :W] == 0):
        raise ValueError("patches leave pixels uncovered")
    return acc[..., :H, :W] / cnt[:H, :W]


def augment(pair, rng: np.random.Generator, size: int | None = None):
    """Same random crop, horizontal flip (p = 0.5) and right-angle rotation for both images."""
    x, y = (np.asarray(a) for a in pair)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    H, W = x.shape[-2:]
    size = size or min(H, W)
    if H < size or W < size:
        raise ValueError(f"image {H}x{W} smaller than crop size {size}")
    r = int(rng.integers(0, H - size + 1))
    c = int(rng.integers(0, W - size + 1))
    flip = bool(rng.random() < 0.5)
    k = int(rng.integers(0, 4))

    def apply(a):
        a = a[..., r:r + size, c:c + size]
        if flip:
            a = a[..., ::-1]
        return np.ascontiguousarray(np.rot90(a, k, axes=(-2, -1)))

    return apply(x), apply(y)
