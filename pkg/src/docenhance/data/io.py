"""PNG conversion, atomic writes and the line-delimited manifest."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from ..ocr.text import WordBox


def to_unit(pixels: np.ndarray) -> np.ndarray:
    """8-bit values to [-1, 1]."""
    return np.asarray(pixels, dtype=np.float64) / 127.5 - 1.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    """[-1, 1] to 8-bit with round-half-even."""
    return np.clip(np.rint((np.asarray(img, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return to_unit(np.array(im.convert("L")))


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_png(path, img: np.ndarray):
    import io as _io
    buf = _io.BytesIO()
    Image.fromarray(to_uint8(img), mode="L").save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


@dataclass
class Record:
    degraded: str
    clean: str
    words: Optional[list] = None

    def to_dict(self) -> dict:
        d = {"degraded": self.degraded, "clean": self.clean}
        if self.words is not None:
            d["words"] = [w.to_dict() for w in self.words]
        return d


@dataclass
class SampleManifest:
    records: list = field(default_factory=list)
    root: Path = Path(".")

    def resolve(self, p: str) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.root / p

    def dumps(self) -> str:
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.records)

    def save(self, path):
        atomic_write_bytes(path, self.dumps().encode("utf-8"))


def parse_record(obj: dict) -> Record:
    unknown = set(obj) - {"degraded", "clean", "words"}
    if unknown:
        raise ValueError(f"unknown manifest fields {sorted(unknown)}")
    for key in ("degraded", "clean"):
        if not isinstance(obj.get(key), str):
            raise ValueError(f"manifest record missing string field {key!r}")
    words = obj.get("words")
    if words is not None:
        words = [WordBox.from_dict(w) for w in words]
    return Record(obj["degraded"], obj["clean"], words)


def load_manifest(path, check_files: bool = True) -> SampleManifest:
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(parse_record(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    man = SampleManifest(records, path.parent)
    if check_files:
        for rec in records:
            for p in (rec.degraded, rec.clean):
                if not man.resolve(p).is_file():
                    raise FileNotFoundError(f"manifest references missing file {p}")
            if rec.words:
                with Image.open(man.resolve(rec.clean)) as im:
                    shape = (im.height, im.width)
                for w in rec.words:
                    if not w.fits(shape):
                        raise ValueError(f"box {w.bbox} for {w.text!r} outside {rec.clean}")
    return man
