"""Joint training step, the DDIM sampler and the exponential-integrator ODE sampler.

The samplers accept any ``model`` exposing ``predictor(y)`` and
``denoiser(r_t, t, x_I)``; tests plug in closed-form oracles that way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .freq import FilterPair, LossReport, combine, denoiser_loss, init_loss
from .nafnet import DESK, Denoiser, InitialPredictor, NetworkConfig, TimeEmbedding
from .schedule import NoiseSchedule

VALUE_RANGE = (-1.0, 1.0)

SAMPLER_KINDS = ("ddim", "ode_solver")
SPACINGS = ("uniform_t", "uniform_lambda")


@dataclass(frozen=True)
class SamplerSpec:
    kind: str = "ode_solver"
    steps: int = 20
    order: int = 2
    step_spacing: str = "uniform_lambda"

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.step_spacing not in SPACINGS:
            raise ValueError(f"unknown step spacing {self.step_spacing!r}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError("steps must be a positive integer")
        if self.order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        if self.kind == "ode_solver" and self.order == 2 and self.steps < 2:
            raise ValueError("order 2 requires steps >= 2")

    def validate(self, T: int) -> "SamplerSpec":
        if self.steps > T:
            raise ValueError(f"steps={self.steps} exceeds T={T}")
        return self


class RestorationModel(nn.Module):
    """Initial predictor plus residual denoiser."""

    def __init__(self, predictor_cfg: NetworkConfig = DESK,
                 denoiser_cfg: NetworkConfig = NetworkConfig(in_channels=2),
                 time_cfg: TimeEmbedding = TimeEmbedding(), T: int = 100):
        super().__init__()
        self.predictor = InitialPredictor(predictor_cfg)
        self.denoiser = Denoiser(denoiser_cfg, time_cfg, T=T)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainOptions:
    lr: float = 1e-4
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.0
    grad_clip: float = 1.0
    squared_denoiser_loss: bool = False
    detach_initial: bool = False
    ctc_weight: float = 1.0


@dataclass
class TrainState:
    model: RestorationModel
    optimizer: torch.optim.Optimizer
    generator: torch.Generator
    seed: int
    iteration: int = 0
    options: TrainOptions = field(default_factory=TrainOptions)

    @classmethod
    def create(cls, model: RestorationModel, seed: int = 0, options: Optional[TrainOptions] = None) -> "TrainState":
        options = options or TrainOptions()
        opt = torch.optim.Adam(model.parameters(), lr=options.lr, betas=tuple(options.betas),
                               weight_decay=options.weight_decay)
        gen = torch.Generator().manual_seed(int(seed))
        return cls(model=model, optimizer=opt, generator=gen, seed=int(seed), options=options)


@dataclass
class ForwardPass:
    x_I: torch.Tensor
    r0: torch.Tensor
    r0_hat: torch.Tensor
    t: torch.Tensor
    report: LossReport


def diffusion_forward(x_gt, y, state: TrainState, sched: NoiseSchedule, f: FilterPair = FilterPair()) -> ForwardPass:
    """Forward half of one training iteration (no parameter update)."""
    if x_gt.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x_gt.shape)} vs {tuple(y.shape)}")
    model, g = state.model, state.generator
    n = x_gt.shape[0]
    t = torch.randint(1, sched.T + 1, (n,), generator=g)
    eps = torch.randn(x_gt.shape, generator=g, dtype=x_gt.dtype)

    x_I = model.predictor(y)
    cond = x_I.detach() if state.options.detach_initial else x_I
    r0 = x_gt - cond
    abar = torch.tensor(sched.alpha_bar, dtype=x_gt.dtype)[t - 1].reshape(n, 1, 1, 1)
    r_t = abar.sqrt() * r0 + (1 - abar).sqrt() * eps
    r0_hat = model.denoiser(r_t, t.to(x_gt.dtype), cond)

    rep = combine(init_loss(x_gt, x_I, f), denoiser_loss(r0, r0_hat, f, squared=state.options.squared_denoiser_loss))
    return ForwardPass(x_I=x_I, r0=r0, r0_hat=r0_hat, t=t, report=rep)


def check_finite(report: LossReport):
    for name, v in report.as_dict().items():
        if not math.isfinite(v):
            raise FloatingPointError(f"non-finite loss component {name}={v}")


def apply_update(state: TrainState, loss: torch.Tensor, params=None):
    params = list(state.model.parameters()) if params is None else list(params)
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    if state.options.grad_clip and state.options.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(params, state.options.grad_clip)
    state.optimizer.step()
    state.iteration += 1


def train_step(batch, state: TrainState, sched: NoiseSchedule, f: FilterPair = FilterPair()):
    """One joint gradient update of both networks on ``L_TOT``.

    ``batch`` is a pair ``(x_gt, y)`` of (N, 1, H, W) tensors. Returns the
    (mutated) state and a detached loss report.
    """
    x_gt, y = batch
    state.model.train()
    fp = diffusion_forward(x_gt, y, state, sched, f)
    check_finite(fp.report)
    apply_update(state, fp.report.l_total)
    return state, fp.report.detach()


# ---------------------------------------------------------------------------
# sampling


def sampling_times(sched: NoiseSchedule, n: int, spacing: str = "uniform_lambda") -> np.ndarray:
    """``n`` descending evaluation times from ``T`` to 1 (just ``[T]`` for ``n == 1``)."""
    T = sched.T
    if not 1 <= n <= T:
        raise ValueError(f"need 1 <= n <= T, got n={n}, T={T}")
    if n == 1:
        return np.array([float(T)])
    if spacing == "uniform_t":
        ts = np.round(np.linspace(T, 1, n))
    elif spacing == "uniform_lambda":
        lam = np.linspace(sched.marginal_lambda(T), sched.marginal_lambda(1), n)
        ts = sched.inverse_lambda(lam)
        ts[0], ts[-1] = T, 1.0
    else:
        raise ValueError(f"unknown spacing {spacing!r}")
    return ts.astype(np.float64)


def _alpha_sigma(lam: float):
    # VP relation: abar = sigmoid(2 lam); exact endpoints at lam = +inf
    if lam == math.inf:
        return 1.0, 0.0
    return math.sqrt(1.0 / (1.0 + math.exp(-2.0 * lam))), math.sqrt(1.0 / (1.0 + math.exp(2.0 * lam)))


def first_order_update(x, lam_u: float, lam_t: float, d_u):
    """``x_t = (s_t/s_u) x_u + a_t (1 - e^{-h}) D_u`` with ``h = lam_t - lam_u``."""
    a_t, s_t = _alpha_sigma(lam_t)
    _, s_u = _alpha_sigma(lam_u)
    h = lam_t - lam_u
    return (s_t / s_u) * x + (a_t * -math.expm1(-h)) * d_u


def integrate_lambda(x, lambdas: Sequence[float], data_fn: Callable, orders: Sequence[int]):
    """Integrate the data-prediction diffusion ODE across ``lambdas`` (increasing).

    ``data_fn(x, lam)`` returns the clean-data prediction; ``orders[i]`` selects a
    first-order step or a midpoint (second-order) step on interval ``i``.
    """
    if len(orders) != len(lambdas) - 1:
        raise ValueError("need one order per interval")
    for lam_u, lam_t, order in zip(lambdas[:-1], lambdas[1:], orders):
        d_u = data_fn(x, lam_u)
        if order == 1:
            x = first_order_update(x, lam_u, lam_t, d_u)
        elif order == 2:
            if not math.isfinite(lam_t):
                raise ValueError("midpoint stage undefined on an interval ending at lambda=+inf")
            lam_m = lam_u + 0.5 * (lam_t - lam_u)
            x_m = first_order_update(x, lam_u, lam_m, d_u)
            x = first_order_update(x, lam_u, lam_t, data_fn(x_m, lam_m))
        else:
            raise ValueError(f"unsupported order {order}")
    return x


def _noise_like(y, seed: int):
    g = torch.Generator().manual_seed(int(seed))
    return torch.randn(y.shape, generator=g, dtype=torch.float64).to(y.dtype)


def _time_tensor(t: float, y):
    return torch.full((y.shape[0],), float(t), dtype=y.dtype, device=y.device)


def _finish(x_I, r0):
    return torch.clamp(x_I + r0, *VALUE_RANGE)


@torch.no_grad()
def sample_ddim(y, model, sched: NoiseSchedule, steps: int, seed: int = 0, spacing: str = "uniform_t"):
    """Deterministic DDIM over ``steps`` strided timesteps; the last jump lands on the clean residual."""
    x_I = model.predictor(y)
    r = _noise_like(y, seed)
    times = sampling_times(sched, steps, spacing)
    la = sched.log_abar(times)
    for k, t in enumerate(times):
        ab = math.exp(la[k])
        ab_next = math.exp(la[k + 1]) if k + 1 < len(times) else 1.0
        r0_hat = model.denoiser(r, _time_tensor(t, y), x_I)
        eps = (r - math.sqrt(ab) * r0_hat) / math.sqrt(1.0 - ab)
        r = math.sqrt(ab_next) * r0_hat + math.sqrt(1.0 - ab_next) * eps
    return _finish(x_I, r)


def solver_plan(sched: NoiseSchedule, spec: SamplerSpec):
    """Evaluation times and per-interval orders whose total evaluation count is ``spec.steps``.

    The final interval runs to the clean state (lambda = +inf) and is always
    first order. With order 2 and an even budget the first interval is first
    order too.
    """
    if spec.order == 1:
        times = sampling_times(sched, spec.steps, spec.step_spacing)
        orders = [1] * len(times)
    else:
        n_nodes = spec.steps // 2 + 1
        times = sampling_times(sched, n_nodes, spec.step_spacing)
        orders = [2] * (n_nodes - 1) + [1]
        if spec.steps % 2 == 0:
            orders[0] = 1
    return times, orders


@torch.no_grad()
def sample_ode_solver(y, model, sched: NoiseSchedule, spec: SamplerSpec = SamplerSpec(), seed: int = 0):
    spec.validate(sched.T)
    x_I = model.predictor(y)
    r = _noise_like(y, seed)
    times, orders = solver_plan(sched, spec)
    lambdas = [float(v) for v in sched.marginal_lambda(times)] + [math.inf]

    def data_fn(x, lam):
        t = float(sched.inverse_lambda(lam))
        return model.denoiser(x, _time_tensor(t, y), x_I)

    # evaluate the denoiser at the exact node times rather than round-tripping through lambda
    node_t = dict(zip(lambdas[:-1], times))

    def data_fn_nodes(x, lam):
        if lam in node_t:
            return model.denoiser(x, _time_tensor(node_t[lam], y), x_I)
        return data_fn(x, lam)

    r = integrate_lambda(r, lambdas, data_fn_nodes, orders)
    return _finish(x_I, r)


def restore(y, model, spec: SamplerSpec = SamplerSpec(), seed: int = 0, sched: Optional[NoiseSchedule] = None):
    if sched is None:
        from .schedule import make_linear_schedule
        sched = make_linear_schedule(model.denoiser.T)
    if spec.kind == "ddim":
        return sample_ddim(y, model, sched, spec.steps, seed, spacing=spec.step_spacing)
    return sample_ode_solver(y, model, sched, spec, seed)
