"""Connectionist temporal classification loss with exact forward-backward gradients."""

from __future__ import annotations

import numpy as np
import torch
from scipy.special import log_softmax

from .text import Alphabet


class CTCInfeasibleError(ValueError):
    """The target cannot be emitted in the available number of frames."""


def min_frames(labels) -> int:
    repeats = sum(1 for a, b in zip(labels[:-1], labels[1:]) if a == b)
    return len(labels) + repeats


def ctc_forward_backward(log_probs: np.ndarray, labels, blank: int = 0):
    """Log-space alpha/beta tables over the blank-augmented label sequence.

    ``beta[t, s]`` includes the emission at frame ``t``; the log-likelihood is
    returned alongside.
    """
    T = log_probs.shape[0]
    ext = [blank]
    for c in labels:
        ext += [c, blank]
    ext = np.asarray(ext)
    S = len(ext)
    # transitions s-2 -> s allowed for non-blank symbols that differ from s-2
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    em = log_probs[:, ext]
    alpha = np.full((T, S), -np.inf)
    alpha[0, 0] = em[0, 0]
    if S > 1:
        alpha[0, 1] = em[0, 1]
    for t in range(1, T):
        a = alpha[t - 1]
        step = np.full(S, -np.inf)
        step[1:] = a[:-1]
        jump = np.full(S, -np.inf)
        jump[2:] = a[:-2]
        jump[~skip] = -np.inf
        alpha[t] = np.logaddexp(np.logaddexp(a, step), jump) + em[t]

    beta = np.full((T, S), -np.inf)
    beta[T - 1, S - 1] = em[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = em[T - 1, S - 2]
    skip_next = np.zeros(S, dtype=bool)
    skip_next[:-2] = skip[2:]
    for t in range(T - 2, -1, -1):
        b = beta[t + 1]
        step = np.full(S, -np.inf)
        step[:-1] = b[1:]
        jump = np.full(S, -np.inf)
        jump[:-2] = b[2:]
        jump[~skip_next] = -np.inf
        beta[t] = np.logaddexp(np.logaddexp(b, step), jump) + em[t]

    tail = alpha[T - 1, S - 1] if S == 1 else np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    return alpha, beta, float(tail), ext


def ctc_loss_labels(scores: np.ndarray, labels, blank: int = 0):
    """Loss and gradient w.r.t. per-frame scores for an integer label sequence.

    Scores are log-softmax normalized per frame first, so passing log
    probabilities is also valid. Gradient is ``softmax(scores) - occupancy``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError("scores must be (frames, classes)")
    labels = list(labels)
    need = min_frames(labels)
    if scores.shape[0] < need:
        raise CTCInfeasibleError(f"target of length {len(labels)} needs {need} frames, got {scores.shape[0]}")
    logp = log_softmax(scores, axis=1)
    alpha, beta, ll, ext = ctc_forward_backward(logp, labels, blank)
    if not np.isfinite(ll):
        raise CTCInfeasibleError("target has zero probability under the given frames")
    # posterior occupancy per (frame, extended position), merged per class
    post = np.exp(alpha + beta - logp[:, ext] - ll)
    occ = np.zeros_like(logp)
    np.add.at(occ, (slice(None), ext), post)
    grad = np.exp(logp) - occ
    return -ll, grad


def ctc_loss(logits, target: str, alphabet: Alphabet):
    """``(loss, gradient)`` for a single sequence of (frames, classes) scores."""
    return ctc_loss_labels(np.asarray(logits), alphabet.encode(target), alphabet.blank_index)


class _CTCFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, scores, labels, blank):
        loss, grad = ctc_loss_labels(scores.detach().cpu().double().numpy(), labels, blank)
        ctx.save_for_backward(torch.as_tensor(grad, dtype=scores.dtype, device=scores.device))
        return scores.new_tensor(loss)

    @staticmethod
    def backward(ctx, grad_out):
        (grad,) = ctx.saved_tensors
        return grad_out * grad, None, None


def ctc_loss_torch(scores: torch.Tensor, target: str, alphabet: Alphabet) -> torch.Tensor:
    """Differentiable CTC loss on a (frames, classes) tensor."""
    return _CTCFunction.apply(scores, tuple(alphabet.encode(target)), alphabet.blank_index)
