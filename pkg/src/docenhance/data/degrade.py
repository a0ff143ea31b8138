"""Synthetic degradations: Gaussian blur, motion blur, and DIBCO-style noise."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

KINDS = ("gaussian_blur", "motion_blur", "binarization_noise")


@dataclass(frozen=True)
class DegradeSpec:
    kind: str = "gaussian_blur"
    sigma: float = 1.5           # gaussian_blur, 0..10
    kernel_size: int = 0         # gaussian_blur, odd; 0 = 2*ceil(3 sigma) + 1
    length: float = 7.0          # motion_blur, 1..63 pixels
    angle: float = 0.0           # motion_blur, degrees
    stain: float = 0.3           # binarization_noise, 0..1
    bleed: float = 0.3           # binarization_noise, 0..1
    noise: float = 0.05          # binarization_noise, pixel std in [0, 0.5]
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown degradation kind {self.kind!r}")
        if not 0 <= self.sigma <= 10:
            raise ValueError("sigma must lie in [0, 10]")
        if self.kernel_size < 0 or (self.kernel_size and self.kernel_size % 2 == 0):
            raise ValueError("kernel_size must be 0 (auto) or a positive odd integer")
        if not 1 <= self.length <= 63:
            raise ValueError("motion length must lie in [1, 63]")
        for name in ("stain", "bleed"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0 <= self.noise <= 0.5:
            raise ValueError("noise must lie in [0, 0.5]")

    def to_dict(self) -> dict:
        return asdict(self)


def gaussian_blur_kernel(sigma: float, size: int = 0) -> np.ndarray:
    if sigma == 0:
        return np.ones((1, 1))
    if size == 0:
        size = 2 * math.ceil(3 * sigma) + 1
    x = np.arange(size) - size // 2
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k2 = np.outer(k, k)
    return k2 / k2.sum()


def motion_blur_kernel(length: float, angle_deg: float) -> np.ndarray:
    """Anti-aliased line of the given length through the kernel centre, unit sum."""
    size = int(math.ceil(length)) | 1
    k = np.zeros((size, size))
    c = size // 2
    th = math.radians(angle_deg)
    dx, dy = math.cos(th), -math.sin(th)
    for s in np.linspace(-(length - 1) / 2, (length - 1) / 2, max(2, int(20 * length))):
        x, y = c + s * dx, c + s * dy
        x0, y0 = int(math.floor(x)), int(math.floor(y))
        fx, fy = x - x0, y - y0
        for yy, xx, w in ((y0, x0, (1 - fx) * (1 - fy)), (y0, x0 + 1, fx * (1 - fy)),
                          (y0 + 1, x0, (1 - fx) * fy), (y0 + 1, x0 + 1, fx * fy)):
            if 0 <= yy < size and 0 <= xx < size:
                k[yy, xx] += w
    return k / k.sum()


def convolve_reflect(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # scipy "mirror" == reflect padding without repeating the edge sample
    return ndimage.convolve(np.asarray(img, dtype=np.float64), kernel, mode="mirror")


def degrade(clean: np.ndarray, spec: DegradeSpec) -> np.ndarray:
    """Apply ``spec`` to a [-1, 1] image; deterministic in ``spec.seed``."""
    clean = np.asarray(clean, dtype=np.float64)
    if spec.kind == "gaussian_blur":
        out = convolve_reflect(clean, gaussian_blur_kernel(spec.sigma, spec.kernel_size))
    elif spec.kind == "motion_blur":
        out = convolve_reflect(clean, motion_blur_kernel(spec.length, spec.angle))
    else:
        rng = np.random.default_rng(spec.seed)
        ink = (1.0 - clean) / 2.0
        field = ndimage.gaussian_filter(rng.normal(size=clean.shape), sigma=max(clean.shape) / 8, mode="wrap")
        field = (field - field.min()) / (np.ptp(field) + 1e-12)
        mirror = ndimage.gaussian_filter(ink[:, ::-1], sigma=1.0)
        dark = np.clip(ink + 0.6 * spec.stain * field + spec.bleed * mirror, 0.0, 1.0)
        out = 1.0 - 2.0 * dark + spec.noise * rng.normal(size=clean.shape)
    return np.clip(out, -1.0, 1.0)
