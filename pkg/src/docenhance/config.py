"""Run configuration: nested dataclasses loaded from YAML with strict validation.

Every key has a documented default; unknown keys and out-of-range values raise
:class:`ConfigError` naming the offending key. Any key can be overridden with
``section.key=value`` strings (values parsed as YAML scalars).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Optional

import yaml

from .data.degrade import DegradeSpec
from .diffusion import SPACINGS, SAMPLER_KINDS, SamplerSpec, TrainOptions
from .freq import FilterPair
from .nafnet import NetworkConfig, TimeEmbedding
from .ocr.crnn import CRNNConfig
from .ocr.text import DEFAULT_SYMBOLS
from .schedule import make_linear_schedule


class ConfigError(ValueError):
    pass


@dataclass
class ScheduleSection:
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def check(self):
        _require(self.T >= 1, "schedule.T", "must be >= 1")
        _require(0 < self.beta_start <= self.beta_end < 1, "schedule.beta_start", "need 0 < beta_start <= beta_end < 1")


@dataclass
class NetworkSection:
    width: int = 16
    enc_blocks: list = field(default_factory=lambda: [1, 1])
    middle_blocks: int = 1
    dec_blocks: list = field(default_factory=lambda: [1, 1])
    expansion: int = 2

    def check(self, name):
        _require(self.width >= 1, f"{name}.width", "must be positive")
        _require(len(self.enc_blocks) == len(self.dec_blocks), f"{name}.dec_blocks", "needs as many stages as enc_blocks")
        _require(self.expansion >= 1, f"{name}.expansion", "must be positive")


@dataclass
class TimeSection:
    dim: int = 32
    mlp_hidden: int = 64

    def check(self):
        _require(self.dim >= 2 and self.dim % 2 == 0, "time_embedding.dim", "must be even and >= 2")
        _require(self.mlp_hidden >= 1, "time_embedding.mlp_hidden", "must be positive")


@dataclass
class CRNNSection:
    height: int = 32
    channels: list = field(default_factory=lambda: [16, 32, 48, 64])
    hidden: int = 48
    symbols: str = DEFAULT_SYMBOLS
    pretrain_epochs: int = 80
    pretrain_lr: float = 5e-3
    pretrain_batch_size: int = 8

    def check(self):
        _require(self.height % 16 == 0, "crnn.height", "must be divisible by 16")
        _require(len(self.channels) == 4, "crnn.channels", "needs four entries")
        _require(self.pretrain_epochs >= 0, "crnn.pretrain_epochs", "must be >= 0")
        _require(self.pretrain_lr > 0, "crnn.pretrain_lr", "must be positive")


@dataclass
class LossSection:
    filter_size: int = 5
    filter_sigma: float = 1.0
    squared_denoiser: bool = False
    ctc_weight: float = 1.0

    def check(self):
        _require(self.filter_size >= 1 and self.filter_size % 2 == 1, "loss.filter_size", "must be odd and positive")
        _require(self.filter_sigma > 0, "loss.filter_sigma", "must be positive")
        _require(self.ctc_weight >= 0, "loss.ctc_weight", "must be >= 0")


@dataclass
class OptimSection:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    grad_clip: float = 1.0
    detach_initial: bool = False

    def check(self):
        _require(self.lr > 0, "optim.lr", "must be positive")
        _require(0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, "optim.beta1", "betas must lie in [0, 1)")
        _require(self.weight_decay >= 0, "optim.weight_decay", "must be >= 0")
        _require(self.grad_clip >= 0, "optim.grad_clip", "must be >= 0")


@dataclass
class DataSection:
    manifest: Optional[str] = None
    patch_size: int = 32
    overlap: int = 8
    batch_size: int = 16
    val_fraction: float = 0.1

    def check(self):
        _require(self.patch_size >= 4 and self.patch_size % 4 == 0, "data.patch_size", "must be a positive multiple of 4")
        _require(0 <= self.overlap < self.patch_size, "data.overlap", "need 0 <= overlap < patch_size")
        _require(self.batch_size >= 1, "data.batch_size", "must be positive")
        _require(0 <= self.val_fraction < 1, "data.val_fraction", "must lie in [0, 1)")


@dataclass
class TrainSection:
    iterations: int = 1000
    log_every: int = 50
    checkpoint_every: int = 500
    eval_every: int = 0
    finetune: bool = False
    finetune_start: Optional[int] = None
    finetune_iterations: int = 200

    def check(self):
        _require(self.iterations >= 0, "train.iterations", "must be >= 0")
        _require(self.log_every >= 1, "train.log_every", "must be positive")
        _require(self.checkpoint_every >= 0, "train.checkpoint_every", "must be >= 0")
        _require(self.eval_every >= 0, "train.eval_every", "must be >= 0")
        _require(self.finetune_iterations >= 0, "train.finetune_iterations", "must be >= 0")
        if self.finetune_start is not None:
            _require(0 <= self.finetune_start <= self.iterations, "train.finetune_start", "must lie in [0, iterations]")

    @property
    def finetune_from(self) -> int:
        # default: the last 12.5% of iterations
        return self.finetune_start if self.finetune_start is not None else int(round(0.875 * self.iterations))


@dataclass
class SamplerSection:
    kind: str = "ode_solver"
    steps: int = 20
    order: int = 2
    spacing: str = "uniform_lambda"

    def check(self):
        _require(self.kind in SAMPLER_KINDS, "sampler.kind", f"must be one of {SAMPLER_KINDS}")
        _require(self.spacing in SPACINGS, "sampler.spacing", f"must be one of {SPACINGS}")
        _require(self.order in (1, 2), "sampler.order", "must be 1 or 2")
        _require(self.steps >= 1, "sampler.steps", "must be positive")
        _require(not (self.kind == "ode_solver" and self.order == 2 and self.steps < 2), "sampler.steps",
                 "order 2 needs at least 2 steps")


@dataclass
class TrainConfig:
    seed: int = 0
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    predictor: NetworkSection = field(default_factory=NetworkSection)
    denoiser: NetworkSection = field(default_factory=NetworkSection)
    time_embedding: TimeSection = field(default_factory=TimeSection)
    crnn: CRNNSection = field(default_factory=CRNNSection)
    loss: LossSection = field(default_factory=LossSection)
    optim: OptimSection = field(default_factory=OptimSection)
    data: DataSection = field(default_factory=DataSection)
    train: TrainSection = field(default_factory=TrainSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)

    def check(self) -> "TrainConfig":
        self.schedule.check()
        self.predictor.check("predictor")
        self.denoiser.check("denoiser")
        self.time_embedding.check()
        self.crnn.check()
        self.loss.check()
        self.optim.check()
        self.data.check()
        self.train.check()
        self.sampler.check()
        _require(self.sampler.steps <= self.schedule.T, "sampler.steps", "must not exceed schedule.T")
        for name in ("predictor", "denoiser"):
            f = 2 ** len(getattr(self, name).enc_blocks)
            _require(self.data.patch_size % f == 0, "data.patch_size", f"must be divisible by {f} ({name} depth)")
        return self

    # -- typed views -------------------------------------------------------

    def schedule_obj(self):
        return make_linear_schedule(self.schedule.T, self.schedule.beta_start, self.schedule.beta_end)

    def network_cfg(self, name: str) -> NetworkConfig:
        s = getattr(self, name)
        return NetworkConfig(width=s.width, enc_blocks=s.enc_blocks, middle_blocks=s.middle_blocks,
                             dec_blocks=s.dec_blocks, in_channels=2 if name == "denoiser" else 1,
                             out_channels=1, expansion=s.expansion)

    def time_cfg(self) -> TimeEmbedding:
        return TimeEmbedding(self.time_embedding.dim, self.time_embedding.mlp_hidden)

    def crnn_cfg(self) -> CRNNConfig:
        c = self.crnn
        return CRNNConfig(height=c.height, channels=tuple(c.channels), hidden=c.hidden, symbols=c.symbols)

    def filters(self) -> FilterPair:
        return FilterPair(self.loss.filter_size, self.loss.filter_sigma)

    def train_options(self) -> TrainOptions:
        o = self.optim
        return TrainOptions(lr=o.lr, betas=(o.beta1, o.beta2), weight_decay=o.weight_decay, grad_clip=o.grad_clip,
                            squared_denoiser_loss=self.loss.squared_denoiser, detach_initial=o.detach_initial,
                            ctc_weight=self.loss.ctc_weight)

    def sampler_spec(self) -> SamplerSpec:
        s = self.sampler
        return SamplerSpec(s.kind, s.steps, s.order, s.spacing)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _require(cond: bool, key: str, msg: str):
    if not cond:
        raise ConfigError(f"{key}: {msg}")


def _build(cls, data: Any, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key {prefix}{unknown[0]}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        key = prefix + name
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, key + ".")
        else:
            kwargs[name] = _coerce(value, default, key)
    return cls(**kwargs)


def _coerce(value, default, key):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return value
    return value


def config_from_dict(data: Optional[dict]) -> TrainConfig:
    return _build(TrainConfig, data or {}, "").check()


def apply_overrides(data: dict, overrides) -> dict:
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key}: {p} is not a section")
        node[parts[-1]] = yaml.safe_load(raw)
    return data


def load_config(path=None, overrides=()) -> TrainConfig:
    data = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
    return config_from_dict(apply_overrides(data, overrides))


def dump_config(cfg: TrainConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def degrade_spec_from_args(**kw) -> DegradeSpec:
    try:
        return DegradeSpec(**{k: v for k, v in kw.items() if v is not None})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
