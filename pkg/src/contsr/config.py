"""Run configuration: a JSON document with fixed sections, unknown keys rejected.

Example (every key optional; shown values are the defaults)::

    {
      "format_version": 1,
      "model":    {"depth": 3, "base_channels": 32, "channel_mults": [1, 2, 4],
                   "dropout": 0.2, "max_scale": 4.0, "image_channels": 3,
                   "extractor_channels": 32, "extractor_blocks": 4,
                   "scale_hidden": 256, "implicit_hidden": 256},
      "schedule": {"T": 1000, "beta_start": 0.0001, "beta_end": 0.02, "kind": "linear"},
      "train":    {"max_scale": 4.0, "milestone_steps": 2000, "post_milestone_steps": 1000,
                   "lr_phase1": 0.0001, "lr_phase2": 2e-05, "batch_size": 4, "seed": 0,
                   "checkpoint_every": 500},
      "sampler":  {"variance": "beta", "seed": 0},
      "data":     {"hr_dir": "data/hr", "lr_size": 16, "out_dir": "runs/default"},
      "eval":     {"metrics": ["psnr", "ssim", "consistency"], "scales": [2.0, 4.0]}
    }

Relative paths in ``data`` resolve against the config file's directory.
``max_scale`` given in only one of ``model`` / ``train`` is copied to the other.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .denoiser import DenoiserConfig
from .sampler import SamplerConfig
from .schedule import build_schedule
from .trainer import TrainConfig

FORMAT_VERSION = 1
METRICS = ("psnr", "ssim", "consistency")


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass
class ScheduleConfig:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    kind: str = "linear"

    def build(self):
        return build_schedule(self.T, self.beta_start, self.beta_end, self.kind)


@dataclass
class DataConfig:
    hr_dir: str = "data/hr"
    lr_size: int = 16
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.lr_size < 1:
            raise ValueError("lr_size must be positive")


@dataclass
class EvalConfig:
    metrics: list[str] = field(default_factory=lambda: list(METRICS))
    scales: list[float] = field(default_factory=lambda: [2.0, 4.0])

    def __post_init__(self):
        bad = [m for m in self.metrics if m not in METRICS]
        if bad:
            raise ValueError(f"unknown metrics {bad}; choose from {METRICS}")
        self.scales = [float(s) for s in self.scales]


@dataclass
class RunConfig:
    model: DenoiserConfig = field(default_factory=DenoiserConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    base_dir: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        if self.model.max_scale != self.train.max_scale:
            raise ConfigError(
                f"model.max_scale {self.model.max_scale} != train.max_scale "
                f"{self.train.max_scale}")
        try:
            self.schedule.build()
        except ValueError as e:
            raise ConfigError(f"schedule: {e}") from e

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    def to_dict(self) -> dict:
        d = {"format_version": FORMAT_VERSION}
        for name in _SECTIONS:
            section = getattr(self, name)
            d[name] = section.to_dict() if name == "model" else asdict(section)
        return d


_SECTIONS = {
    "model": DenoiserConfig,
    "schedule": ScheduleConfig,
    "train": TrainConfig,
    "sampler": SamplerConfig,
    "data": DataConfig,
    "eval": EvalConfig,
}


def _build_section(name: str, cls, raw) -> object:
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {unknown}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name}: {e}") from e


def parse_config(doc: dict, base_dir: Path | str = ".") -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    version = doc.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ConfigError(f"unsupported format_version {version!r}")
    unknown = sorted(set(doc) - set(_SECTIONS) - {"format_version"})
    if unknown:
        raise ConfigError(f"unknown top-level keys: {unknown}")
    raw = {name: doc.get(name, {}) for name in _SECTIONS}
    if not all(isinstance(v, dict) for v in raw.values()):
        raise ConfigError("every section must be a JSON object")
    # max_scale given in only one of model/train is inherited by the other
    m, t = raw["model"].get("max_scale"), raw["train"].get("max_scale")
    if m is None and t is not None:
        raw["model"] = {**raw["model"], "max_scale": t}
    elif t is None and m is not None:
        raw["train"] = {**raw["train"], "max_scale": m}
    sections = {name: _build_section(name, cls, raw[name])
                for name, cls in _SECTIONS.items()}
    return RunConfig(**sections, base_dir=Path(base_dir))


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e}") from e
    return parse_config(doc, path.parent)
