"""Black-on-white text rendering with exact word boxes."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..ocr.text import WordBox
from .font import GLYPH_H, GLYPH_W, glyph

INK, PAPER = -1.0, 1.0


def text_width(text: str, scale: int = 1, tracking: int = 1) -> int:
    if not text:
        return 0
    return scale * (len(text) * (GLYPH_W + tracking) - tracking)


def render_text_image(lines: Sequence[str], size, scale: int = 1, margin: int = 1,
                      line_gap: int = 2, tracking: int = 1):
    """Render ``lines`` top-left aligned into an ``(H, W)`` page.

    Returns the image in [-1, 1] (text = -1) and one tight ``WordBox`` per
    space-separated word, in reading order.
    """
    H, W = size
    if scale < 1:
        raise ValueError("scale must be >= 1")
    img = np.full((H, W), PAPER, dtype=np.float64)
    boxes: list[WordBox] = []
    advance = scale * (GLYPH_W + tracking)
    line_h = scale * (GLYPH_H + line_gap)
    for li, line in enumerate(lines):
        y0 = margin + li * line_h
        x_end = margin + text_width(line, scale, tracking)
        if line and (y0 + scale * GLYPH_H > H or x_end > W):
            raise ValueError(f"line {li} ({line!r}) overflows a {H}x{W} page")
        ink = np.zeros((H, W), dtype=bool)
        for ci, ch in enumerate(line):
            g = np.kron(glyph(ch), np.ones((scale, scale), dtype=bool))
            x0 = margin + ci * advance
            ink[y0:y0 + g.shape[0], x0:x0 + g.shape[1]] |= g
        img[ink] = INK
        col = 0
        for word in line.split(" "):
            if word:
                x0 = margin + col * advance
                x1 = x0 + text_width(word, scale, tracking)
                region = ink[:, x0:x1]
                ys = np.flatnonzero(region.any(axis=1))
                xs = np.flatnonzero(region.any(axis=0))
                boxes.append(WordBox(word, (x0 + xs[0], ys[0], xs[-1] - xs[0] + 1, ys[-1] - ys[0] + 1)))
            col += len(word) + 1
    return img, boxes
