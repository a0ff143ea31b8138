"""Word-patch extraction, surrogate pretraining and OCR-guided finetuning."""

from __future__ import annotations

import logging
import math
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..diffusion import TrainState, apply_update, check_finite, diffusion_forward
from ..freq import FilterPair
from ..schedule import NoiseSchedule
from .crnn import CRNN, CRNNConfig
from .ctc import ctc_loss_torch, min_frames
from .text import Alphabet, WordBox, cer, ctc_greedy_decode

log = logging.getLogger(__name__)

BACKGROUND = 1.0


def extract_word_patches(image: torch.Tensor, boxes: Sequence[WordBox], height: int = 32, stride: int = 4,
                         alphabet: Alphabet | None = None) -> list:
    """Crop each box, bilinearly rescale to ``height`` keeping aspect, right-pad
    with background to a multiple of ``stride`` frames. Differentiable in ``image``.

    ``image`` is (H, W) or (1, H, W). With an ``alphabet`` the width is also
    padded so the word's CTC alignment fits.
    """
    img = image.reshape(image.shape[-2:])
    out = []
    for box in boxes:
        x, y, w, h = box.bbox
        if w <= 0 or h <= 0:
            raise ValueError(f"degenerate box {box.bbox}")
        if not box.fits(img.shape):
            raise ValueError(f"box {box.bbox} outside image {tuple(img.shape)}")
        crop = img[y:y + h, x:x + w][None, None]
        new_w = max(1, int(round(w * height / h)))
        patch = F.interpolate(crop, size=(height, new_w), mode="bilinear", align_corners=False)[0, 0]
        frames = math.ceil(new_w / stride)
        if alphabet is not None:
            frames = max(frames, min_frames(alphabet.encode(box.text)))
        pad = frames * stride - new_w
        if pad:
            patch = F.pad(patch, (0, pad), value=BACKGROUND)
        out.append(patch)
    return out


def batch_ctc(model: CRNN, patches: Sequence[torch.Tensor], texts: Sequence[str]) -> torch.Tensor:
    """Mean per-word CTC loss; patches of unequal width are right-padded with
    background and each word is scored on its own frames only."""
    alphabet = model.cfg.alphabet
    stride = model.cfg.frame_stride
    wmax = max(p.shape[-1] for p in patches)
    batch = torch.stack([F.pad(p, (0, wmax - p.shape[-1]), value=BACKGROUND) for p in patches])[:, None]
    logp = model(batch)
    losses = [ctc_loss_torch(logp[i, : p.shape[-1] // stride], txt, alphabet)
              for i, (p, txt) in enumerate(zip(patches, texts))]
    return torch.stack(losses).mean()


@torch.no_grad()
def recognize(model: CRNN, patches: Sequence[torch.Tensor]) -> list[str]:
    model.eval()
    stride = model.cfg.frame_stride
    outs = []
    for p in patches:
        logp = model(p[None, None].to(next(model.parameters()).dtype))[0, : p.shape[-1] // stride]
        outs.append(ctc_greedy_decode(logp.numpy(), model.cfg.alphabet))
    return outs


def pretrain_crnn(dataset, epochs: int, cfg: CRNNConfig = CRNNConfig(), model: CRNN | None = None,
                  lr: float = 5e-3, batch_size: int = 8, seed: int = 0) -> CRNN:
    """Fit the recognizer on ``(patch, text)`` pairs by minimizing CTC loss."""
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty pretraining set")
    alphabet = cfg.alphabet
    for _, text in dataset:
        if not alphabet.covers(text):
            raise ValueError(f"text {text!r} has symbols outside the alphabet")
    torch.manual_seed(seed)
    model = model or CRNN(cfg)
    if epochs <= 0:
        return model
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=epochs, eta_min=0.1 * lr)
    rng = np.random.default_rng(seed)
    model.train()
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for i in range(0, len(order), batch_size):
            items = [dataset[j] for j in order[i:i + batch_size]]
            loss = batch_ctc(model, [torch.as_tensor(p, dtype=torch.float32) for p, _ in items], [t for _, t in items])
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), 5.0)
            opt.step()
            total += float(loss.detach()) * len(items)
        sched.step()
        if epoch % 10 == 0 or epoch == epochs - 1:
            log.info("crnn epoch %d ctc %.4f", epoch, total / len(dataset))
    model.eval()
    return model


def recognizer_cer(model: CRNN, dataset) -> float:
    patches = [torch.as_tensor(p, dtype=torch.float32) for p, _ in dataset]
    return cer(recognize(model, patches), [t for _, t in dataset])


def freeze(model: CRNN) -> CRNN:
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def finetune_step(batch, state: TrainState, sched: NoiseSchedule, crnn: CRNN, f: FilterPair = FilterPair()):
    """One update of both restoration networks on ``L_TOT + w * L_CTC``.

    ``batch`` is ``(x_gt, y, words)`` where ``words[i]`` lists the WordBoxes of
    item ``i``. The recognizer is frozen; with no boxes this is exactly
    ``train_step``.
    """
    x_gt, y, words = batch
    if words is None or len(words) != x_gt.shape[0]:
        raise ValueError("finetuning needs a word list per batch item")
    freeze(crnn)
    state.model.train()
    fp = diffusion_forward(x_gt, y, state, sched, f)
    report = fp.report
    loss = report.l_total
    texts, patches = [], []
    if any(words):
        x_hat = fp.x_I + fp.r0_hat
        for i, boxes in enumerate(words):
            if boxes:
                patches += extract_word_patches(x_hat[i], boxes, crnn.cfg.height, crnn.cfg.frame_stride, crnn.cfg.alphabet)
                texts += [b.text for b in boxes]
        l_ctc = batch_ctc(crnn, [p.to(torch.float32) for p in patches], texts).to(loss.dtype)
        report.l_ctc = l_ctc
        loss = loss + state.options.ctc_weight * l_ctc
    check_finite(report)
    apply_update(state, loss)
    return state, report.detach()
