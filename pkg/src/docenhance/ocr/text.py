"""Label space, edit distance and character error rate."""

from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_SYMBOLS = string.ascii_lowercase + string.digits + " .,;:!?'-"


@dataclass(frozen=True)
class Alphabet:
    """Ordered symbols; index 0 is the CTC blank, symbol ``i`` maps to index ``i + 1``."""

    symbols: str = DEFAULT_SYMBOLS
    blank_index: int = 0

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("alphabet symbols must be distinct")
        if self.blank_index != 0:
            raise ValueError("blank index is reserved as 0")

    @property
    def size(self) -> int:
        """Number of classes including the blank."""
        return len(self.symbols) + 1

    def encode(self, text: str) -> list[int]:
        try:
            return [self.symbols.index(c) + 1 for c in text]
        except ValueError:
            bad = sorted(set(text) - set(self.symbols))
            raise ValueError(f"characters {bad!r} not in alphabet") from None

    def decode(self, indices: Sequence[int]) -> str:
        return "".join(self.symbols[i - 1] for i in indices if i != self.blank_index)

    def covers(self, text: str) -> bool:
        return set(text) <= set(self.symbols)


@dataclass(frozen=True)
class WordBox:
    """A word label with its pixel rectangle ``(x, y, w, h)``."""

    text: str
    bbox: tuple

    def __post_init__(self):
        if not self.text:
            raise ValueError("word text must be non-empty")
        bbox = tuple(int(v) for v in self.bbox)
        if len(bbox) != 4 or bbox[2] <= 0 or bbox[3] <= 0 or bbox[0] < 0 or bbox[1] < 0:
            raise ValueError(f"invalid bbox {self.bbox!r}")
        object.__setattr__(self, "bbox", bbox)

    def fits(self, shape) -> bool:
        x, y, w, h = self.bbox
        return x + w <= shape[-1] and y + h <= shape[-2]

    def to_dict(self) -> dict:
        return {"text": self.text, "bbox": list(self.bbox)}

    @classmethod
    def from_dict(cls, d: dict) -> "WordBox":
        return cls(d["text"], tuple(d["bbox"]))


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance (two-row dynamic program)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def cer(hyps: Sequence[str], refs: Sequence[str]) -> float:
    """Corpus character error rate in percent."""
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses for {len(refs)} references")
    total = sum(len(r) for r in refs)
    if total == 0:
        raise ValueError("reference corpus has no characters")
    return 100.0 * sum(levenshtein(h, r) for h, r in zip(hyps, refs)) / total


def ctc_greedy_decode(logits, alphabet: Alphabet) -> str:
    """Per-frame argmax, collapse repeats, drop blanks. ``logits`` is (frames, classes)."""
    best = np.asarray(logits).argmax(axis=-1)
    out, prev = [], None
    for k in best:
        if k != prev and k != alphabet.blank_index:
            out.append(int(k))
        prev = k
    return alphabet.decode(out)
