"""Diffusion-based document enhancement with frequency-split losses, fast samplers and OCR-guided finetuning."""

from .diffusion import RestorationModel, SamplerSpec, TrainOptions, TrainState, restore, train_step
from .freq import FilterPair, LossReport
from .schedule import NoiseSchedule, make_linear_schedule

__version__ = "0.1.0"

__all__ = [
    "FilterPair", "LossReport", "NoiseSchedule", "RestorationModel", "SamplerSpec", "TrainOptions", "TrainState",
    "make_linear_schedule", "restore", "train_step",
]
