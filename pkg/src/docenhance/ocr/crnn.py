"""Small convolutional-recurrent recognizer used as a differentiable OCR surrogate."""

from __future__ import annotations

from dataclasses import dataclass

import torch.nn as nn
import torch.nn.functional as F

from .text import Alphabet


@dataclass(frozen=True)
class CRNNConfig:
    height: int = 32
    channels: tuple = (16, 32, 48, 64)
    hidden: int = 48
    symbols: str = Alphabet().symbols

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) != 4:
            raise ValueError("CRNN uses exactly four conv stages")
        if self.height % 16:
            raise ValueError("recognition height must be divisible by 16")

    @property
    def alphabet(self) -> Alphabet:
        return Alphabet(self.symbols)

    @property
    def frame_stride(self) -> int:
        return 4

    def to_dict(self) -> dict:
        return {"height": self.height, "channels": list(self.channels), "hidden": self.hidden, "symbols": self.symbols}


class CRNN(nn.Module):
    """Four 3x3 conv + batch-norm stages (strides 2, 2, (2,1), (2,1)), the remaining rows
    folded into the feature axis, a bidirectional LSTM across width and a
    per-frame classifier. Input pixels are mapped to ink density (1 - x) / 2."""

    def __init__(self, cfg: CRNNConfig = CRNNConfig()):
        super().__init__()
        self.cfg = cfg
        c1, c2, c3, c4 = cfg.channels
        self.convs = nn.ModuleList([
            nn.Conv2d(1, c1, 3, stride=2, padding=1),
            nn.Conv2d(c1, c2, 3, stride=2, padding=1),
            nn.Conv2d(c2, c3, 3, stride=(2, 1), padding=1),
            nn.Conv2d(c3, c4, 3, stride=(2, 1), padding=1),
        ])
        self.norms = nn.ModuleList([nn.BatchNorm2d(c) for c in cfg.channels])
        self.rnn = nn.LSTM(c4 * (cfg.height // 16), cfg.hidden, batch_first=True, bidirectional=True)
        self.classifier = nn.Linear(2 * cfg.hidden, cfg.alphabet.size)

    def forward(self, x):
        """(N, 1, H, W) -> (N, W / 4, classes) log-probabilities."""
        if x.shape[-2] != self.cfg.height:
            raise ValueError(f"expected height {self.cfg.height}, got {x.shape[-2]}")
        x = (1.0 - x) / 2.0
        for conv, norm in zip(self.convs, self.norms):
            x = F.relu(norm(conv(x)))
        n, c, h, w = x.shape
        seq = x.reshape(n, c * h, w).transpose(1, 2)
        out, _ = self.rnn(seq)
        return F.log_softmax(self.classifier(out), dim=-1)


def crnn_forward(patch, model: CRNN):
    """Single patch (H, W) or batch (N, 1, H, W) to log-probability frames."""
    if patch.ndim == 2:
        return model(patch[None, None])[0]
    return model(patch)
