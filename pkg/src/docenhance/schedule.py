"""Discrete noise schedule and the forward (noising) process on residual images.

Timesteps are 1-based: ``t = 1..T`` index the noisy states and ``t = 0`` is the
clean residual with ``alpha_bar(0) = 1``. The stored arrays have length ``T``
with entry ``i`` belonging to timestep ``i + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size == 0:
            raise ValueError("beta must be a non-empty 1-D sequence")
        if not np.all((beta > 0) & (beta < 1)):
            raise ValueError("all beta values must lie in (0, 1)")
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        for name, arr in (("beta", beta), ("alpha", alpha), ("alpha_bar", alpha_bar)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return int(self.beta.size)

    def abar(self, t) -> float:
        """alpha_bar at integer timestep ``t`` in ``0..T`` (1.0 at ``t = 0``)."""
        t = _check_t(t, self.T, allow_zero=True)
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    # -- continuous-time view used by the ODE sampler -------------------------

    def log_abar(self, t) -> np.ndarray:
        """log alpha_bar at real ``t`` in ``[0, T]``, linear between integer steps."""
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0) or np.any(t > self.T):
            raise ValueError(f"continuous time outside [0, {self.T}]")
        grid = np.arange(self.T + 1, dtype=np.float64)
        vals = np.concatenate([[0.0], np.log(self.alpha_bar)])
        return np.interp(t, grid, vals)

    def marginal_lambda(self, t) -> np.ndarray:
        """Half log-SNR, ``log(a / s)`` with ``a = sqrt(abar)``, ``s = sqrt(1 - abar)``.

        Returns ``+inf`` at ``t = 0``.
        """
        la = self.log_abar(t)
        with np.errstate(divide="ignore"):
            return 0.5 * la - 0.5 * np.log(-np.expm1(la))

    def inverse_lambda(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=np.float64)
        # abar = sigmoid(2 lam)
        la = -np.logaddexp(0.0, -2.0 * lam)
        grid = np.arange(self.T + 1, dtype=np.float64)
        vals = np.concatenate([[0.0], np.log(self.alpha_bar)])
        # vals is decreasing; np.interp needs increasing abscissae
        return np.interp(la, vals[::-1], grid[::-1])


def make_linear_schedule(T: int = 100, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if not (0 < beta_start <= beta_end < 1):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    return NoiseSchedule(np.linspace(beta_start, beta_end, int(T), dtype=np.float64))


def _check_t(t, T: int, allow_zero: bool = False) -> int:
    if int(t) != t:
        raise ValueError(f"timestep must be an integer, got {t!r}")
    t = int(t)
    lo = 0 if allow_zero else 1
    if not lo <= t <= T:
        raise ValueError(f"timestep {t} outside [{lo}, {T}]")
    return t


def _coeffs(t, sched: NoiseSchedule):
    ab = sched.abar(_check_t(t, sched.T))
    return np.sqrt(ab), np.sqrt(1.0 - ab)


def forward_diffuse(r0, t: int, eps, sched: NoiseSchedule):
    """``sqrt(abar_t) * r0 + sqrt(1 - abar_t) * eps``; works on arrays or tensors."""
    if tuple(r0.shape) != tuple(eps.shape):
        raise ValueError(f"shape mismatch: {tuple(r0.shape)} vs {tuple(eps.shape)}")
    a, s = _coeffs(t, sched)
    return a * r0 + s * eps


def eps_from_prediction(r_t, r0_hat, t: int, sched: NoiseSchedule):
    a, s = _coeffs(t, sched)
    return (r_t - a * r0_hat) / s
