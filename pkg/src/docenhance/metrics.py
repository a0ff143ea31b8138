"""PSNR, SSIM, binarization F-measure / pseudo-F-measure and corpus evaluation.

Pixel metrics work on images in [0, 1]; :func:`evaluate` converts from the
internal [-1, 1] range. Binary metrics take boolean text masks (text = True).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

PSNR_CAP = 100.0


def _check_pair(x, y):
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def psnr(x, y, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)`` in dB, capped at 100 dB for identical inputs."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    x, y = _check_pair(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def _gauss1d(window: int, sigma: float) -> np.ndarray:
    r = np.arange(window) - window // 2
    k = np.exp(-0.5 * (r / sigma) ** 2)
    return k / k.sum()


def ssim(x, y, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0) -> float:
    """Mean SSIM over all fully-covered window positions (Gaussian weights)."""
    x, y = _check_pair(x, y)
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd integer")
    if window > min(x.shape):
        raise ValueError(f"window {window} larger than image {x.shape}")
    k = _gauss1d(window, sigma)

    def filt(a):
        a = ndimage.correlate1d(a, k, axis=0, mode="reflect")
        return ndimage.correlate1d(a, k, axis=1, mode="reflect")

    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mx, my = filt(x), filt(y)
    vx = filt(x * x) - mx * mx
    vy = filt(y * y) - my * my
    cxy = filt(x * y) - mx * my
    smap = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2))
    p = window // 2
    return float(smap[p:smap.shape[0] - p, p:smap.shape[1] - p].mean())


def binarize(x, threshold: float = 0.0, low: float = -1.0, high: float = 1.0) -> np.ndarray:
    """Pixels at or above ``threshold`` become background (``high``), the rest text (``low``)."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= threshold, high, low)


def text_mask(x, threshold: float = 0.0) -> np.ndarray:
    return np.asarray(x) < threshold


def _counts(pred, gt):
    pred, gt = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return pred, gt


def _harmonic(p: float, r: float) -> float:
    return 100.0 * 2 * p * r / (p + r)


def f_measure(pred, gt) -> float:
    """Pixel F-measure in percent with text as the positive class; 0 when TP = 0."""
    pred, gt = _counts(pred, gt)
    tp = int(np.sum(pred & gt))
    if tp == 0:
        return 0.0
    return _harmonic(tp / int(pred.sum()), tp / int(gt.sum()))


def _neighbours(img: np.ndarray):
    """The 8 neighbours counter-clockwise from east, zero outside the image."""
    p = np.pad(img, 1)
    H, W = img.shape
    at = lambda dr, dc: p[1 + dr:1 + dr + H, 1 + dc:1 + dc + W]
    return [at(0, 1), at(-1, 1), at(-1, 0), at(-1, -1), at(0, -1), at(1, -1), at(1, 0), at(1, 1)]


def thin(mask, max_iter: Optional[int] = None) -> np.ndarray:
    """Two-subiteration parallel thinning (Guo-Hall conditions) until stable."""
    skel = np.asarray(mask, dtype=bool).copy()
    it = 0
    while max_iter is None or it < max_iter:
        changed = False
        for second in (False, True):
            x = _neighbours(skel)
            crossings = sum((~x[i]) & (x[i + 1] | x[(i + 2) % 8]) for i in (0, 2, 4, 6))
            n1 = sum(x[k] | x[k - 1] for k in (1, 3, 5, 7))
            n2 = sum(x[k] | x[(k + 1) % 8] for k in (1, 3, 5, 7))
            m = np.minimum(n1, n2)
            if second:
                g3 = ~((x[5] | x[6] | ~x[3]) & x[4])
            else:
                g3 = ~((x[1] | x[2] | ~x[7]) & x[0])
            delete = skel & (crossings == 1) & (m >= 2) & (m <= 3) & g3
            if delete.any():
                skel &= ~delete
                changed = True
        it += 1
        if not changed:
            break
    return skel


def pseudo_f_measure(pred, gt) -> float:
    """F-measure with recall measured on the skeleton of the ground-truth text."""
    pred, gt = _counts(pred, gt)
    skel = thin(gt)
    tp = int(np.sum(pred & gt))
    tp_skel = int(np.sum(pred & skel))
    if tp == 0 or tp_skel == 0:
        return 0.0
    return _harmonic(tp / int(pred.sum()), tp_skel / int(skel.sum()))


# ---------------------------------------------------------------------------


@dataclass
class ImageMetrics:
    name: str
    psnr: float
    ssim: Optional[float] = None
    f_measure: Optional[float] = None
    pseudo_f_measure: Optional[float] = None


@dataclass
class EvalReport:
    mode: str
    psnr: float
    ssim: Optional[float] = None
    f_measure: Optional[float] = None
    pseudo_f_measure: Optional[float] = None
    cer: Optional[float] = None
    per_image: list = field(default_factory=list)

    KEYS = ("psnr", "ssim", "f_measure", "pseudo_f_measure", "cer")

    def to_text(self) -> str:
        def fmt(obj, keys):
            return " ".join(f"{k}={getattr(obj, k):.6f}" for k in keys if getattr(obj, k, None) is not None)

        lines = [f"[aggregate] mode={self.mode} images={len(self.per_image)} {fmt(self, self.KEYS)}"]
        for im in self.per_image:
            lines.append(f"[image] name={im.name} {fmt(im, self.KEYS[:4])}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        def parse(line):
            return dict(tok.split("=", 1) for tok in line.split()[1:])

        lines = [ln for ln in text.splitlines() if ln.strip()]
        agg = parse(lines[0])
        rep = cls(mode=agg.pop("mode"), psnr=float(agg.pop("psnr")))
        agg.pop("images")
        for k, v in agg.items():
            setattr(rep, k, float(v))
        for ln in lines[1:]:
            d = parse(ln)
            name = d.pop("name")
            rep.per_image.append(ImageMetrics(name=name, **{k: float(v) for k, v in d.items()}))
        return rep


def _mean(vals):
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def image_metrics(name: str, restored: np.ndarray, clean: np.ndarray, mode: str) -> ImageMetrics:
    """Metrics for one [-1, 1] image pair."""
    if mode == "binarize":
        restored = binarize(restored, 0.0)
        clean = binarize(clean, 0.0)
    r01, c01 = (restored + 1) / 2, (clean + 1) / 2
    win = min(11, min(r01.shape) - (1 - min(r01.shape) % 2))
    m = ImageMetrics(name=name, psnr=psnr(r01, c01, 1.0), ssim=ssim(r01, c01, window=win))
    if mode == "binarize":
        pm, gm = text_mask(restored), text_mask(clean)
        m.f_measure = f_measure(pm, gm)
        m.pseudo_f_measure = pseudo_f_measure(pm, gm)
    return m


def evaluate(manifest, restored: Sequence[np.ndarray], mode: str = "deblur", recognizer=None) -> EvalReport:
    """Per-image metrics and their means for restored images aligned with ``manifest`` records.

    With a CRNN ``recognizer`` and word labels in the manifest the corpus CER is added.
    """
    from .data.io import load_png

    if mode not in ("deblur", "binarize"):
        raise ValueError(f"unknown mode {mode!r}")
    records = manifest.records
    if len(records) != len(restored):
        raise ValueError(f"{len(restored)} outputs for {len(records)} manifest records")
    per = []
    hyps, refs = [], []
    for rec, out in zip(records, restored):
        clean = load_png(manifest.resolve(rec.clean))
        out = np.asarray(out, dtype=np.float64)
        if out.shape != clean.shape:
            raise ValueError(f"output shape {out.shape} != ground truth {clean.shape} for {rec.clean}")
        per.append(image_metrics(rec.clean, out, clean, mode))
        if recognizer is not None and rec.words:
            import torch
            from .ocr.finetune import extract_word_patches, recognize
            patches = extract_word_patches(torch.as_tensor(out, dtype=torch.float32), rec.words,
                                           recognizer.cfg.height, recognizer.cfg.frame_stride,
                                           recognizer.cfg.alphabet)
            hyps += recognize(recognizer, patches)
            refs += [w.text for w in rec.words]
    from .ocr.text import cer as corpus_cer
    return EvalReport(
        mode=mode,
        psnr=_mean(m.psnr for m in per),
        ssim=_mean(m.ssim for m in per),
        f_measure=_mean(m.f_measure for m in per),
        pseudo_f_measure=_mean(m.pseudo_f_measure for m in per),
        cer=corpus_cer(hyps, refs) if refs else None,
        per_image=per,
    )
