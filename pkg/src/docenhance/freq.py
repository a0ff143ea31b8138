"""Frequency separation filters and the loss terms of the joint objective."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F


def gaussian_kernel1d(size: int, sigma: float) -> np.ndarray:
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {size}")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x = np.arange(size, dtype=np.float64) - size // 2
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


@dataclass(frozen=True)
class FilterPair:
    """Low-pass kernel; the high-pass filter is identity minus low-pass."""

    kernel_size: int = 5
    sigma: float = 1.0

    @property
    def lowpass_kernel(self) -> np.ndarray:
        k = gaussian_kernel1d(self.kernel_size, self.sigma)
        return np.outer(k, k)


def _as_nchw(x: torch.Tensor):
    if x.ndim == 2:
        return x[None, None], lambda y: y[0, 0]
    if x.ndim == 3:
        return x[:, None], lambda y: y[:, 0]
    if x.ndim == 4:
        if x.shape[1] != 1:
            raise ValueError(f"expected a single-channel image, got {x.shape[1]} channels")
        return x, lambda y: y
    raise ValueError(f"unsupported image shape {tuple(x.shape)}")


def lowpass(x, f: FilterPair = FilterPair()):
    """Convolve with the low-pass kernel under reflect padding (shape preserving).

    Accepts a numpy array or a tensor of shape (H, W), (N, H, W) or (N, 1, H, W).
    """
    if isinstance(x, np.ndarray):
        return lowpass(torch.from_numpy(x), f).numpy()
    xb, restore = _as_nchw(x)
    p = f.kernel_size // 2
    if min(xb.shape[-2:]) <= p:
        raise ValueError(f"image {tuple(xb.shape[-2:])} too small for a {f.kernel_size}x{f.kernel_size} kernel")
    k = torch.as_tensor(f.lowpass_kernel, dtype=xb.dtype, device=xb.device)[None, None]
    y = F.conv2d(F.pad(xb, (p, p, p, p), mode="reflect"), k)
    return restore(y)


def highpass(x, f: FilterPair = FilterPair()):
    return x - lowpass(x, f)


@dataclass
class LossReport:
    """Loss breakdown. Entries are 0-d tensors during training; ``None`` when not computed."""

    l_mse: Optional[torch.Tensor] = None
    l_low: Optional[torch.Tensor] = None
    l_init: Optional[torch.Tensor] = None
    l_dpm: Optional[torch.Tensor] = None
    l_high: Optional[torch.Tensor] = None
    l_denoiser: Optional[torch.Tensor] = None
    l_total: Optional[torch.Tensor] = None
    l_ctc: Optional[torch.Tensor] = None

    def as_dict(self) -> dict:
        out = {}
        for fl in fields(self):
            v = getattr(self, fl.name)
            if v is not None:
                out[fl.name] = float(v.detach()) if torch.is_tensor(v) else float(v)
        return out

    def detach(self) -> "LossReport":
        return replace(self, **{k: torch.as_tensor(v) for k, v in self.as_dict().items()})


def _mse(d: torch.Tensor) -> torch.Tensor:
    return d.pow(2).mean()


def _normalized_l2(d: torch.Tensor, squared: bool) -> torch.Tensor:
    # per-item L2 norm divided by sqrt(pixel count), then averaged over the batch
    flat = d.reshape(d.shape[0], -1) if d.ndim > 2 else d.reshape(1, -1)
    npix = flat.shape[1]
    if squared:
        per_item = flat.pow(2).mean(dim=1)
    else:
        per_item = torch.linalg.vector_norm(flat, dim=1) / np.sqrt(npix)
    return per_item.mean()


def _check_shapes(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def init_loss(x_gt, x_I, f: FilterPair = FilterPair()) -> LossReport:
    """MSE plus low-band MSE for the initial predictor: ``l_init = l_mse + 2 l_low``."""
    _check_shapes(x_gt, x_I)
    d = x_gt - x_I
    l_mse = _mse(d)
    l_low = _mse(lowpass(d, f))
    return LossReport(l_mse=l_mse, l_low=l_low, l_init=l_mse + 2 * l_low)


def denoiser_loss(r0, r0_hat, f: FilterPair = FilterPair(), squared: bool = False) -> LossReport:
    """Residual-space losses for the denoiser: ``l_denoiser = l_dpm + 2 l_high``.

    By default the norms are not squared; ``squared=True`` switches both terms to
    per-pixel mean squares.
    """
    _check_shapes(r0, r0_hat)
    d = r0 - r0_hat
    l_dpm = _normalized_l2(d, squared)
    l_high = _normalized_l2(highpass(d, f), squared)
    return LossReport(l_dpm=l_dpm, l_high=l_high, l_denoiser=l_dpm + 2 * l_high)


def total_loss(init: LossReport, den: LossReport):
    return 0.5 * init.l_init + den.l_denoiser


def combine(init: LossReport, den: LossReport) -> LossReport:
    return LossReport(
        l_mse=init.l_mse, l_low=init.l_low, l_init=init.l_init,
        l_dpm=den.l_dpm, l_high=den.l_high, l_denoiser=den.l_denoiser,
        l_total=total_loss(init, den),
    )
