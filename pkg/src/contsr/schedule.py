"""Noise schedule and forward (corruption) process."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variances ``beta`` and cumulative signal retention ``gamma``.

    Steps are 1-indexed in the public API (``t`` in ``1..T``); the arrays are
    stored 0-indexed, so ``gamma_at(t) == gamma[t - 1]``.
    """

    beta: np.ndarray
    beta_start: float = field(default=float("nan"))
    beta_end: float = field(default=float("nan"))
    kind: str = "linear"

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size == 0:
            raise ValueError("beta must be a non-empty 1-D array")
        if not np.all((beta > 0) & (beta < 1)):
            raise ValueError("every beta must lie in (0, 1)")
        beta.setflags(write=False)
        gamma = np.cumprod(1.0 - beta)
        gamma.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)

    @property
    def T(self) -> int:
        return int(self.beta.size)

    def _check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise ValueError(f"step index {t} outside 1..{self.T}")
        return t

    def beta_at(self, t: int) -> float:
        return float(self.beta[self._check_t(t) - 1])

    def gamma_at(self, t: int) -> float:
        return float(self.gamma[self._check_t(t) - 1])

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "kind": self.kind,
        }


def build_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2,
                   kind: str = "linear") -> NoiseSchedule:
    if kind != "linear":
        raise ValueError(f"unsupported schedule kind {kind!r}")
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.linspace(beta_start, beta_end, int(T), dtype=np.float64)
    return NoiseSchedule(beta, beta_start=float(beta_start),
                         beta_end=float(beta_end), kind=kind)


def schedule_from_dict(d: dict) -> NoiseSchedule:
    return build_schedule(int(d["T"]), float(d["beta_start"]),
                          float(d["beta_end"]), d.get("kind", "linear"))


def gamma_tensor(t, sched: NoiseSchedule, like: torch.Tensor) -> torch.Tensor:
    """gamma for a scalar step or a per-sample vector of steps, broadcastable to ``like``."""
    if isinstance(t, (int, np.integer)):
        return torch.tensor(sched.gamma_at(int(t)), dtype=torch.float64)
    idx = torch.as_tensor(t).long().reshape(-1)
    if idx.numel() != like.shape[0]:
        raise ValueError(f"{idx.numel()} step indices for batch of {like.shape[0]}")
    if idx.min() < 1 or idx.max() > sched.T:
        raise ValueError(f"step indices outside 1..{sched.T}")
    g = torch.tensor(sched.gamma)[idx - 1]
    return g.reshape(-1, *([1] * (like.dim() - 1)))


def q_sample(y0: torch.Tensor, t, eps: torch.Tensor,
             sched: NoiseSchedule) -> torch.Tensor:
    """Draw ``y_t ~ q(y_t | y_0)`` with the supplied noise: sqrt(g) y0 + sqrt(1-g) eps.

    ``t`` is a single step index or one index per batch element.
    """
    if y0.shape != eps.shape:
        raise ValueError(f"shape mismatch: y0 {tuple(y0.shape)} vs eps {tuple(eps.shape)}")
    g = gamma_tensor(t, sched, y0)
    a = torch.sqrt(g).to(y0.dtype)
    b = torch.sqrt(1.0 - g).to(y0.dtype)
    return a * y0 + b * eps
