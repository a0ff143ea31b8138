"""Activation-free U-net blocks, the initial predictor and the time-conditioned denoiser."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class NafBlockConfig:
    channels: int
    expansion: int = 2
    uses_time: bool = False
    time_dim: int = 0

    def __post_init__(self):
        if self.channels < 1 or self.expansion < 1:
            raise ValueError("channels and expansion must be positive")
        if self.uses_time and self.time_dim < 1:
            raise ValueError("time-conditioned block needs time_dim >= 1")


@dataclass(frozen=True)
class TimeEmbedding:
    dim: int = 32
    mlp_hidden: int = 64

    def __post_init__(self):
        if self.dim < 2 or self.dim % 2:
            raise ValueError(f"time embedding dim must be even and >= 2, got {self.dim}")
        if self.mlp_hidden < 1:
            raise ValueError("mlp_hidden must be positive")


@dataclass(frozen=True)
class NetworkConfig:
    width: int = 16
    enc_blocks: Sequence[int] = (1, 1)
    middle_blocks: int = 1
    dec_blocks: Sequence[int] = (1, 1)
    in_channels: int = 1
    out_channels: int = 1
    expansion: int = 2

    def __post_init__(self):
        object.__setattr__(self, "enc_blocks", tuple(int(b) for b in self.enc_blocks))
        object.__setattr__(self, "dec_blocks", tuple(int(b) for b in self.dec_blocks))
        if len(self.enc_blocks) != len(self.dec_blocks):
            raise ValueError("encoder and decoder must have the same number of stages")
        if self.width < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("width and channel counts must be positive")
        if any(b < 0 for b in self.enc_blocks + self.dec_blocks) or self.middle_blocks < 0:
            raise ValueError("block counts must be non-negative")

    @property
    def downsample_factor(self) -> int:
        return 2 ** len(self.enc_blocks)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["enc_blocks"] = list(self.enc_blocks)
        d["dec_blocks"] = list(self.dec_blocks)
        return d


# desk-scale default used by tests and the toy runs
DESK = NetworkConfig()
# wider, deeper variant for larger datasets; not needed for the toy runs
LARGE = NetworkConfig(width=32, enc_blocks=(1, 1, 1, 28), middle_blocks=1, dec_blocks=(1, 1, 1, 1))


def simple_gate(x: torch.Tensor) -> torch.Tensor:
    if x.shape[1] % 2:
        raise ValueError(f"simple_gate needs an even channel count, got {x.shape[1]}")
    a, b = x.chunk(2, dim=1)
    return a * b


class SimpleGate(nn.Module):
    def forward(self, x):
        return simple_gate(x)


def simple_channel_attention(x: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Global average pool, one pointwise linear map, channelwise rescale of ``x``.

    ``weight`` has shape (C, C); ``bias`` (C,).
    """
    pooled = x.mean(dim=(2, 3))
    att = F.linear(pooled, weight, bias)
    return x * att[:, :, None, None]


class SimpleChannelAttention(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.proj = nn.Linear(channels, channels)

    def forward(self, x):
        return simple_channel_attention(x, self.proj.weight, self.proj.bias)


class LayerNorm2d(nn.Module):
    """Layer norm across channels at every spatial position."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x):
        mu = x.mean(dim=1, keepdim=True)
        var = (x - mu).pow(2).mean(dim=1, keepdim=True)
        y = (x - mu) / torch.sqrt(var + self.eps)
        return y * self.weight[None, :, None, None] + self.bias[None, :, None, None]


def sinusoidal_encoding(t, dim: int) -> torch.Tensor:
    """Interleaved ``[sin(t w_0), cos(t w_0), sin(t w_1), ...]`` with ``w_k = 10000^(-2k/dim)``.

    ``t`` may be a python number or a 1-D tensor; the result has shape (N, dim).
    """
    t = torch.as_tensor(t)
    if not t.is_floating_point():
        t = t.to(torch.get_default_dtype())
    t = t.reshape(-1)
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / half)
    ang = t[:, None] * freqs[None, :]
    return torch.stack([torch.sin(ang), torch.cos(ang)], dim=-1).reshape(t.shape[0], dim)


class TimeMLP(nn.Module):
    """Sinusoidal encoding followed by a two-layer gated MLP."""

    def __init__(self, cfg: TimeEmbedding = TimeEmbedding()):
        super().__init__()
        self.cfg = cfg
        self.fc1 = nn.Linear(cfg.dim, 2 * cfg.mlp_hidden)
        self.fc2 = nn.Linear(cfg.mlp_hidden, cfg.dim)

    def forward(self, t):
        dtype = self.fc1.weight.dtype
        if not torch.is_tensor(t):
            t = torch.tensor(t, dtype=dtype)
        enc = sinusoidal_encoding(t.to(dtype=dtype, device=self.fc1.weight.device), self.cfg.dim)
        return self.fc2(simple_gate(self.fc1(enc)))


def time_embed(t, mlp: TimeMLP) -> torch.Tensor:
    return mlp(t)


class NAFBlock(nn.Module):
    """Two residual branches: (norm, 1x1, depthwise 3x3, gate, SCA, 1x1) and
    (norm, 1x1, gate, 1x1), each added back with a learnable per-channel scale.

    With ``uses_time`` the normalization outputs are modulated by
    ``out * (1 + gamma) + beta`` where (gamma, beta) come from a per-block linear
    head on the shared time embedding.
    """

    def __init__(self, cfg: NafBlockConfig):
        super().__init__()
        self.cfg = cfg
        c, dw = cfg.channels, cfg.channels * cfg.expansion
        if dw % 2:
            raise ValueError("expanded width must be even for the gate split")
        self.norm1 = LayerNorm2d(c)
        self.conv1 = nn.Conv2d(c, dw, 1)
        self.conv2 = nn.Conv2d(dw, dw, 3, padding=1, groups=dw)
        self.sca = SimpleChannelAttention(dw // 2)
        self.conv3 = nn.Conv2d(dw // 2, c, 1)

        self.norm2 = LayerNorm2d(c)
        self.conv4 = nn.Conv2d(c, dw, 1)
        self.conv5 = nn.Conv2d(dw // 2, c, 1)

        self.attn_scale = nn.Parameter(torch.zeros(1, c, 1, 1))
        self.ffn_scale = nn.Parameter(torch.zeros(1, c, 1, 1))
        self.time_head = nn.Linear(cfg.time_dim, 2 * c) if cfg.uses_time else None

    def modulation(self, temb):
        gamma, beta = self.time_head(temb).chunk(2, dim=1)
        return gamma[:, :, None, None], beta[:, :, None, None]

    def forward(self, x, temb=None, modulation=None):
        if self.cfg.uses_time:
            if modulation is None:
                if temb is None:
                    raise ValueError("time-conditioned block called without a time embedding")
                modulation = self.modulation(temb)
            gamma, beta = modulation
        elif temb is not None or modulation is not None:
            raise ValueError("unconditioned block received a time embedding")

        h = self.norm1(x)
        if self.cfg.uses_time:
            h = h * (1 + gamma) + beta
        h = self.conv3(self.sca(simple_gate(self.conv2(self.conv1(h)))))
        y = x + h * self.attn_scale

        h = self.norm2(y)
        if self.cfg.uses_time:
            h = h * (1 + gamma) + beta
        h = self.conv5(simple_gate(self.conv4(h)))
        return y + h * self.ffn_scale


def naf_block_forward(x, temb, block: NAFBlock):
    return block(x, temb)


class NAFUNet(nn.Module):
    """U-shaped stack of NAF blocks with additive skip connections."""

    def __init__(self, cfg: NetworkConfig = DESK, time_cfg: Optional[TimeEmbedding] = None):
        super().__init__()
        self.cfg = cfg
        self.time_cfg = time_cfg
        td = time_cfg.dim if time_cfg else 0

        def stage(c, n):
            return nn.ModuleList(
                NAFBlock(NafBlockConfig(c, cfg.expansion, uses_time=time_cfg is not None, time_dim=td))
                for _ in range(n)
            )

        self.time_mlp = TimeMLP(time_cfg) if time_cfg else None
        self.intro = nn.Conv2d(cfg.in_channels, cfg.width, 3, padding=1)
        self.encoders, self.downs = nn.ModuleList(), nn.ModuleList()
        c = cfg.width
        for n in cfg.enc_blocks:
            self.encoders.append(stage(c, n))
            self.downs.append(nn.Conv2d(c, 2 * c, 2, stride=2))
            c *= 2
        self.middle = stage(c, cfg.middle_blocks)
        self.ups, self.decoders = nn.ModuleList(), nn.ModuleList()
        for n in cfg.dec_blocks:
            self.ups.append(nn.Sequential(nn.Conv2d(c, 2 * c, 1, bias=False), nn.PixelShuffle(2)))
            c //= 2
            self.decoders.append(stage(c, n))
        self.ending = nn.Conv2d(cfg.width, cfg.out_channels, 3, padding=1)
        nn.init.zeros_(self.ending.weight)
        nn.init.zeros_(self.ending.bias)

    def _run(self, blocks, x, temb):
        for blk in blocks:
            x = blk(x, temb)
        return x

    def forward(self, x, t=None):
        h, w = x.shape[-2:]
        f = self.cfg.downsample_factor
        if h % f or w % f:
            raise ValueError(f"input {h}x{w} not divisible by the downsampling factor {f}")
        temb = None
        if self.time_mlp is not None:
            if t is None:
                raise ValueError("time-conditioned network needs t")
            t = torch.as_tensor(t, dtype=x.dtype, device=x.device).reshape(-1)
            if t.numel() == 1 and x.shape[0] > 1:
                t = t.expand(x.shape[0])
            temb = self.time_mlp(t)
        x = self.intro(x)
        skips = []
        for blocks, down in zip(self.encoders, self.downs):
            x = self._run(blocks, x, temb)
            skips.append(x)
            x = down(x)
        x = self._run(self.middle, x, temb)
        for up, blocks, skip in zip(self.ups, self.decoders, reversed(skips)):
            x = self._run(blocks, up(x) + skip, temb)
        return self.ending(x)


class InitialPredictor(nn.Module):
    """``x_I = y + U(y)``: global residual over an unconditioned NAF U-net."""

    def __init__(self, cfg: NetworkConfig = DESK):
        super().__init__()
        self.net = NAFUNet(cfg)

    def forward(self, y):
        return y + self.net(y)


class Denoiser(nn.Module):
    """Predicts the clean residual from ``(r_t, t, x_I)``; ``r_t`` and ``x_I`` are
    concatenated along channels. No global skip."""

    def __init__(self, cfg: NetworkConfig = NetworkConfig(in_channels=2), time_cfg: TimeEmbedding = TimeEmbedding(), T: int = 100):
        super().__init__()
        if cfg.in_channels != 2:
            raise ValueError("denoiser takes the noisy residual and the initial prediction (2 channels)")
        self.T = T
        self.net = NAFUNet(cfg, time_cfg)

    def forward(self, r_t, t, x_I):
        if r_t.shape != x_I.shape:
            raise ValueError(f"shape mismatch: {tuple(r_t.shape)} vs {tuple(x_I.shape)}")
        tt = torch.as_tensor(t, dtype=r_t.dtype)
        if torch.any(tt < 1 - 1e-9) or torch.any(tt > self.T + 1e-9):
            raise ValueError(f"timestep outside [1, {self.T}]")
        return self.net(torch.cat([r_t, x_I], dim=1), t)


def initial_predictor_forward(y, model: InitialPredictor):
    return model(y)


def denoiser_forward(r_t, t, x_I, model: Denoiser):
    return model(r_t, t, x_I)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def describe(pred_cfg: NetworkConfig = DESK, den_cfg: NetworkConfig = NetworkConfig(in_channels=2),
             time_cfg: TimeEmbedding = TimeEmbedding()) -> dict:
    ip = count_parameters(InitialPredictor(pred_cfg))
    dn = count_parameters(Denoiser(den_cfg, time_cfg))
    return {"initial_predictor": ip, "denoiser": dn, "total": ip + dn}
