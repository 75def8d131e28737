"""Training: scale sampling, the L1 noise objective and the two-phase schedule.

Phase 1 trains at the fixed maximum scale for ``milestone_steps``; phase 2
draws one scale per batch from U(1, M] for ``post_milestone_steps`` at the
lower learning rate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import torch

from . import checkpoint as ckpt
from .data import degrade
from .denoiser import Denoiser, DenoiserConfig
from .schedule import NoiseSchedule, gamma_tensor, q_sample, schedule_from_dict

log = logging.getLogger(__name__)

LOG_HEADER = "format_version\t1"


class TrainingError(RuntimeError):
    """Non-finite loss or gradient."""


@dataclass
class TrainConfig:
    max_scale: float = 4.0
    milestone_steps: int = 2000
    post_milestone_steps: int = 1000
    lr_phase1: float = 1e-4
    lr_phase2: float = 2e-5
    batch_size: int = 4
    seed: int = 0
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.max_scale <= 1:
            raise ValueError(f"max_scale must exceed 1, got {self.max_scale}")
        if self.milestone_steps < 0 or self.post_milestone_steps < 0:
            raise ValueError("step counts must be non-negative")
        if self.lr_phase1 <= 0 or self.lr_phase2 <= 0:
            raise ValueError("learning rates must be positive")
        if self.lr_phase2 > self.lr_phase1:
            raise ValueError("lr_phase2 must not exceed lr_phase1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be non-negative")

    @property
    def total_steps(self) -> int:
        return self.milestone_steps + self.post_milestone_steps

    def phase(self, step: int) -> str:
        """Phase of the 0-based ``step``."""
        return "fixed" if step < self.milestone_steps else "continuous"

    def lr(self, step: int) -> float:
        return self.lr_phase1 if self.phase(step) == "fixed" else self.lr_phase2


@dataclass
class TrainBatch:
    x_lr: torch.Tensor
    y0: torch.Tensor
    s: float
    t: torch.Tensor
    eps: torch.Tensor


def sample_scale(phase: str, M: float, rng: torch.Generator | None = None) -> float:
    """``M`` in the fixed phase, otherwise a draw from U(1, M]."""
    if M <= 1:
        raise ValueError(f"M must exceed 1, got {M}")
    if phase == "fixed":
        return float(M)
    if phase != "continuous":
        raise ValueError(f"unknown phase {phase!r}")
    u = torch.rand((), generator=rng, dtype=torch.float64).item()  # [0, 1)
    return float(M - u * (M - 1.0))


def loss(eps: torch.Tensor, eps_pred: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over all elements."""
    if eps.shape != eps_pred.shape:
        raise ValueError(f"shape mismatch: {tuple(eps.shape)} vs {tuple(eps_pred.shape)}")
    return (eps - eps_pred).abs().mean()


def make_batch(hr: torch.Tensor, s: float, lr_size, batch_size: int,
               sched: NoiseSchedule, rng: torch.Generator, max_scale: float) -> TrainBatch:
    idx = torch.randint(0, hr.shape[0], (batch_size,), generator=rng)
    x_lr, y0 = degrade(hr[idx], s, lr_size, max_scale)
    t = torch.randint(1, sched.T + 1, (batch_size,), generator=rng)
    eps = torch.randn(y0.shape, generator=rng, dtype=y0.dtype)
    return TrainBatch(x_lr, y0, s, t, eps)


def grad_norm(model: torch.nn.Module) -> float:
    sq = [p.grad.detach().pow(2).sum() for p in model.parameters() if p.grad is not None]
    return math.sqrt(float(torch.stack(sq).sum())) if sq else 0.0


def train_step(batch: TrainBatch, model: Denoiser, sched: NoiseSchedule,
               optimizer: torch.optim.Optimizer) -> float:
    model.train()
    y_t = q_sample(batch.y0, batch.t, batch.eps, sched)
    gamma = gamma_tensor(batch.t, sched, batch.y0).reshape(-1)
    pred = model(batch.x_lr, y_t, gamma, batch.s)
    value = loss(batch.eps, pred)
    if not torch.isfinite(value):
        raise TrainingError(
            f"non-finite loss {value.item()} at s={batch.s}, t={batch.t.tolist()}")
    optimizer.zero_grad(set_to_none=True)
    value.backward()
    gn = grad_norm(model)
    if not math.isfinite(gn):
        raise TrainingError(f"non-finite gradient norm at s={batch.s}, loss={value.item()}")
    optimizer.step()
    return float(value.detach())


class Trainer:
    """Owns model, optimizer and RNG state for one training run."""

    def __init__(self, model: Denoiser, sched: NoiseSchedule, cfg: TrainConfig,
                 hr: torch.Tensor, lr_size: int, out_dir: str | Path | None = None,
                 extra_meta: dict | None = None):
        if hr.shape[0] == 0:
            raise ValueError("empty dataset")
        self.model = model
        self.sched = sched
        self.cfg = cfg
        self.hr = hr
        self.lr_size = lr_size
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.extra_meta = extra_meta or {}
        self.step = 0
        self.losses: list[tuple[int, str, float, float]] = []
        torch.manual_seed(cfg.seed)
        self.rng = torch.Generator().manual_seed(cfg.seed)
        self.optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr(0),
                                          betas=(0.9, 0.999))
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            if not self.log_path.exists():
                self.log_path.write_text(LOG_HEADER + "\n", encoding="utf-8")

    @property
    def log_path(self) -> Path:
        return self.out_dir / "loss_log.tsv"

    def _set_lr(self, lr: float) -> None:
        for group in self.optimizer.param_groups:
            group["lr"] = lr

    def run_step(self) -> float:
        step = self.step
        phase = self.cfg.phase(step)
        self._set_lr(self.cfg.lr(step))
        s = sample_scale(phase, self.cfg.max_scale, self.rng)
        batch = make_batch(self.hr, s, self.lr_size, self.cfg.batch_size, self.sched,
                           self.rng, self.cfg.max_scale)
        value = train_step(batch, self.model, self.sched, self.optimizer)
        self.step += 1
        rec = (self.step, phase, s, value)
        self.losses.append(rec)
        if self.out_dir is not None:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(format_log_line(*rec) + "\n")
        return value

    def run(self, until: int | None = None) -> list[tuple[int, str, float, float]]:
        """Train up to ``until`` completed steps (default: the configured total)."""
        until = self.cfg.total_steps if until is None else min(until, self.cfg.total_steps)
        every = self.cfg.checkpoint_every
        while self.step < until:
            value = self.run_step()
            if self.step % 100 == 0:
                log.info("step %d  phase %s  loss %.4f", self.step,
                         self.cfg.phase(self.step - 1), value)
            if self.out_dir is not None and every and self.step % every == 0:
                self.save(self.out_dir / f"step_{self.step:07d}.ckpt")
        if self.out_dir is not None and self.step == self.cfg.total_steps:
            self.save(self.out_dir / "final.ckpt")
        return self.losses

    # -- checkpoints -----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        tensors = ckpt.model_tensors(self.model)
        opt_tensors, opt_steps = ckpt.optimizer_tensors(self.model, self.optimizer)
        tensors.update(opt_tensors)
        tensors["rng/torch"] = torch.get_rng_state()
        tensors["rng/data"] = self.rng.get_state()
        meta = {
            "model": self.model.config.to_dict(),
            "schedule": self.sched.to_dict(),
            "train": asdict(self.cfg),
            "lr_size": self.lr_size,
            "step": self.step,
            "optimizer": {"kind": "adam", "betas": [0.9, 0.999], "steps": opt_steps},
            **self.extra_meta,
        }
        ckpt.write_archive(path, tensors, meta)

    @classmethod
    def resume(cls, path: str | Path, hr: torch.Tensor,
               out_dir: str | Path | None = None) -> "Trainer":
        tensors, meta = ckpt.read_archive(path)
        model = Denoiser(DenoiserConfig(**meta["model"]))
        ckpt.load_model_tensors(model, tensors)
        sched = schedule_from_dict(meta["schedule"])
        cfg = TrainConfig(**meta["train"])
        extra = {k: v for k, v in meta.items()
                 if k not in ("model", "schedule", "train", "lr_size", "step", "optimizer")}
        tr = cls(model, sched, cfg, hr, meta["lr_size"], out_dir, extra)
        ckpt.restore_optimizer(model, tr.optimizer, tensors, meta["optimizer"]["steps"])
        tr.step = int(meta["step"])
        torch.set_rng_state(tensors["rng/torch"])
        tr.rng.set_state(tensors["rng/data"])
        return tr


def load_model(path: str | Path) -> tuple[Denoiser, NoiseSchedule, dict]:
    """Rebuild an inference model (eval mode) from a checkpoint."""
    tensors, meta = ckpt.read_archive(path)
    try:
        model = Denoiser(DenoiserConfig(**meta["model"]))
        sched = schedule_from_dict(meta["schedule"])
    except (KeyError, TypeError, ValueError) as e:
        raise ckpt.CheckpointError(f"bad checkpoint metadata: {e}") from e
    ckpt.load_model_tensors(model, tensors)
    model.eval()
    return model, sched, meta


def format_log_line(step: int, phase: str, s: float, value: float) -> str:
    return f"{step}\t{phase}\t{s!r}\t{value!r}"


def read_loss_log(path: str | Path) -> list[tuple[int, str, float, float]]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("format_version"):
            continue
        step, phase, s, value = line.split("\t")
        rows.append((int(step), phase, float(s), float(value)))
    return rows
