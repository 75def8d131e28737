"""Continuous-magnification image super-resolution with a conditional diffusion
model whose decoder upsamples through coordinate MLPs."""

from .denoiser import Denoiser, DenoiserConfig, output_size
from .sampler import SamplerConfig, sample
from .schedule import NoiseSchedule, build_schedule, q_sample
from .trainer import TrainConfig, Trainer, load_model

__all__ = [
    "Denoiser",
    "DenoiserConfig",
    "NoiseSchedule",
    "SamplerConfig",
    "TrainConfig",
    "Trainer",
    "build_schedule",
    "load_model",
    "output_size",
    "q_sample",
    "sample",
]
__version__ = "0.1.0"
