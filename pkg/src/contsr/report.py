"""Evaluation over a dataset at several scales, and the report file format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import metrics as M
from .data import degrade
from .imageio import to_unit
from .sampler import SamplerConfig, sample

REPORT_VERSION = 1


@dataclass
class EvalReport:
    metrics: list[str]
    records: list[dict] = field(default_factory=list)

    def aggregates(self) -> list[dict]:
        """One block per scale, in first-seen order; values are arithmetic means."""
        scales = list(dict.fromkeys(r["scale"] for r in self.records))
        out = []
        for s in scales:
            rows = [r for r in self.records if r["scale"] == s]
            block = {"scale": s, "count": len(rows)}
            for m in self.metrics:
                block[m] = float(np.mean([r[m] for r in rows]))
            out.append(block)
        return out

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_VERSION,
            "color_space": "RGB",
            "value_range": [0.0, 1.0],
            "units": {"psnr": "dB", "ssim": "1", "consistency": "MSE x 1e-5"},
            "metrics": list(self.metrics),
            "records": self.records,
            "aggregates": self.aggregates(),
        }

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def image_seed(seed: int, image_index: int, scale_index: int) -> int:
    """Per-image sampling seed, independent of evaluation order."""
    return int(np.random.SeedSequence([seed, image_index, scale_index]).generate_state(1)[0])


def score(x_lr: torch.Tensor, sr: torch.Tensor, y0: torch.Tensor,
          metrics: list[str]) -> dict:
    """Metric values for one image; inputs in [-1, 1], scored in [0, 1]."""
    lr_u, sr_u, hr_u = to_unit(x_lr), to_unit(sr), to_unit(y0)
    out = {}
    for m in metrics:
        if m == "psnr":
            out[m] = M.psnr(sr_u, hr_u)
        elif m == "ssim":
            out[m] = M.ssim(sr_u, hr_u)
        elif m == "consistency":
            out[m] = M.consistency(lr_u, sr_u)
        else:
            raise ValueError(f"unknown metric {m!r}")
    return out


def evaluate(model, sched, hr: torch.Tensor, names: list[str], scales: list[float],
             lr_size: int, seed: int = 0, metrics: list[str] | None = None,
             variance: str = "beta") -> EvalReport:
    """Degrade each HR image, super-resolve it at every scale and score it.

    ``hr`` must be large enough for the largest scale (see :func:`degrade`).
    Each (image, scale) pair is sampled with its own seed from
    :func:`image_seed`.
    """
    if not scales:
        raise ValueError("no scales to evaluate")
    metrics = list(metrics or ("psnr", "ssim", "consistency"))
    report = EvalReport(metrics)
    for j, s in enumerate(scales):
        for i, name in enumerate(names):
            x_lr, y0 = degrade(hr[i], float(s), lr_size)
            cfg = SamplerConfig(variance=variance, seed=image_seed(seed, i, j))
            sr = sample(x_lr, float(s), model, sched, cfg)
            report.records.append({"image": name, "scale": float(s),
                                   **score(x_lr, sr, y0, metrics)})
    return report


def read_report(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != REPORT_VERSION:
        raise ValueError(f"unsupported report format_version {doc.get('format_version')!r}")
    return doc
