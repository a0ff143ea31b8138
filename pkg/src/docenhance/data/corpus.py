"""Toy text corpus for rendering labelled pages."""

from __future__ import annotations

import numpy as np

WORDS = """the of and to in is was for on that with as by at from his her an be this
are which or had not but have it one were all their they been has more two
she new who its into time only other when some would may what these first
then made any over such like also than most after between many used those
made where our under some very while part state about through years during
page line text book paper ink word read print letter note form type mark
clear blur sharp light dark noise clean model image scan copy draft sign
north south east west river city house road field stone water fire wind
red blue green gray black white small large long short high low old young
one two three four five six seven eight nine ten day week month year""".split()


def sample_words(rng: np.random.Generator, n: int, max_len: int | None = None) -> list[str]:
    pool = [w for w in WORDS if max_len is None or len(w) <= max_len]
    return [pool[i] for i in rng.integers(0, len(pool), size=n)]


def sample_lines(rng: np.random.Generator, n_lines: int, max_chars: int) -> list[str]:
    """Random lines of whole words, each at most ``max_chars`` long."""
    lines = []
    for _ in range(n_lines):
        line = ""
        for w in sample_words(rng, 12, max_chars):
            cand = w if not line else f"{line} {w}"
            if len(cand) > max_chars:
                break
            line = cand
        lines.append(line)
    return lines
