"""Ancestral reverse-process sampling from Gaussian noise at the target size."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .denoiser import output_size
from .schedule import NoiseSchedule

VARIANCE_MODES = ("beta", "posterior")


@dataclass
class SamplerConfig:
    variance: str = "beta"
    seed: int = 0

    def __post_init__(self):
        if self.variance not in VARIANCE_MODES:
            raise ValueError(f"variance must be one of {VARIANCE_MODES}, got {self.variance!r}")


def sigma(t: int, sched: NoiseSchedule, variance: str = "beta") -> float:
    """Reverse-step std. dev.; zero on the last step (t = 1)."""
    t = int(t)
    if t == 1:
        return 0.0
    beta = sched.beta_at(t)
    if variance == "beta":
        return float(np.sqrt(beta))
    if variance == "posterior":
        g, g_prev = sched.gamma_at(t), sched.gamma_at(t - 1)
        return float(np.sqrt(beta * (1.0 - g_prev) / (1.0 - g)))
    raise ValueError(f"unknown variance mode {variance!r}")


def p_step(y_t: torch.Tensor, eps_pred: torch.Tensor, t: int, sched: NoiseSchedule,
           noise: torch.Tensor | None = None, sigma_t: float | None = None,
           variance: str = "beta") -> torch.Tensor:
    """One reverse step: (y_t - beta/sqrt(1-gamma) eps) / sqrt(1-beta) + sigma noise.

    ``sigma_t`` overrides the variance mode when given. At ``t == 1`` the
    noise term must be absent or zero.
    """
    if not 1 <= int(t) <= sched.T:
        raise ValueError(f"step index {t} outside 1..{sched.T}")
    if y_t.shape != eps_pred.shape:
        raise ValueError(f"shape mismatch: {tuple(y_t.shape)} vs {tuple(eps_pred.shape)}")
    if noise is not None:
        if noise.shape != y_t.shape:
            raise ValueError("noise shape differs from y_t")
        if t == 1 and bool(torch.any(noise != 0)):
            raise ValueError("noise must be zero on the final step")
    beta = sched.beta_at(t)
    gamma = sched.gamma_at(t)
    mean = (y_t - (beta / np.sqrt(1.0 - gamma)) * eps_pred) / np.sqrt(1.0 - beta)
    if noise is None:
        return mean
    sd = sigma(t, sched, variance) if sigma_t is None else float(sigma_t)
    return mean + sd * noise


@torch.no_grad()
def sample(x_lr: torch.Tensor, s: float, model, sched: NoiseSchedule,
           cfg: SamplerConfig | None = None, generator: torch.Generator | None = None,
           callback=None) -> torch.Tensor:
    """Run the full T-step reverse chain and clamp the result to [-1, 1].

    ``x_lr`` is (B, C, h, w) or (C, h, w). Scales above the model's
    ``max_scale`` are allowed here (out-of-range inference).
    """
    cfg = cfg or SamplerConfig()
    squeeze = x_lr.dim() == 3
    if squeeze:
        x_lr = x_lr[None]
    if generator is None:
        generator = torch.Generator().manual_seed(int(cfg.seed))
    was_training = model.training
    model.eval()
    try:
        H, W = output_size(x_lr.shape[-2], x_lr.shape[-1], float(s))
        shape = (x_lr.shape[0], x_lr.shape[1], H, W)
        dtype = x_lr.dtype
        y = torch.randn(shape, generator=generator, dtype=dtype)
        for t in range(sched.T, 0, -1):
            eps = model(x_lr, y, sched.gamma_at(t), s, extrapolate=True)
            noise = torch.randn(shape, generator=generator, dtype=dtype) if t > 1 else None
            y = p_step(y, eps, t, sched, noise, variance=cfg.variance)
            if callback is not None:
                callback(t, y)
    finally:
        model.train(was_training)
    y = y.clamp(-1.0, 1.0)
    return y[0] if squeeze else y
