"""Small synthetic (clean, degraded, words) triples for probes and smoke runs."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .corpus import sample_lines
from .degrade import DegradeSpec, degrade
from .render import render_text_image


def toy_page(rng: np.random.Generator, size=(32, 32), scale: int = 1):
    H, W = size
    max_chars = max(1, (W - 2 + 1) // (6 * scale))
    n_lines = max(1, (H - 2 + 2) // (9 * scale))
    lines = sample_lines(rng, n_lines, max_chars)
    return render_text_image(lines, size, scale=scale)


def make_toy_pairs(n: int, size=(32, 32), spec: DegradeSpec = DegradeSpec(sigma=1.0), seed: int = 0, scale: int = 1):
    """``n`` rendered pages, their degraded versions and word boxes."""
    rng = np.random.default_rng(seed)
    clean, degraded, words = [], [], []
    for i in range(n):
        img, boxes = toy_page(rng, size, scale)
        clean.append(img)
        degraded.append(degrade(img, replace(spec, seed=int(rng.integers(2**31)))))
        words.append(boxes)
    return np.stack(clean), np.stack(degraded), words
