"""U-Net noise predictor with implicit upsampling and scale-adaptive fusion.

Layout for depth ``N`` and working size ``H x W`` (sizes ceil-halve per depth)::

    x_lr --extractor--> f0 (resized to H x W) --pyramid--> f1 .. fN
    concat(f0, y_t) --stem--> u0 --down--> u_down1 .. u_downN --mid--> u_bottom

    depth N:   h_N = fuse(f_N, u_bottom, u_downN)
    depth i:   u_up_i = D_i(h_{i+1} queried on grid_i);  h_i = fuse(f_i, u_up_i, u_down_i)
    depth 0:   u_up_0 = D_0(h_1 queried on grid_0) -> concat with u0 -> out block -> head

Each fused map passes a residual block (conditioned on the noise level)
before being queried by the next implicit layer.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .conditioning import (
    AdaptiveMLP,
    ConditioningPyramid,
    FeatureExtractor,
    build_pyramid,
    extract_initial_features,
    fuse,
    normalize_alphas,
    scale_to_alphas,
)
from .implicit import ImplicitLayer, halving_ladder, implicit_upsample, make_grid


@dataclass
class DenoiserConfig:
    depth: int = 3
    base_channels: int = 32
    channel_mults: tuple[int, ...] = (1, 2, 4)
    dropout: float = 0.2
    max_scale: float = 4.0
    image_channels: int = 3
    extractor_channels: int = 32
    extractor_blocks: int = 4
    scale_hidden: int = 256
    implicit_hidden: int = 256

    def __post_init__(self):
        self.channel_mults = tuple(int(m) for m in self.channel_mults)
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if len(self.channel_mults) != self.depth:
            raise ValueError(
                f"need {self.depth} channel multipliers, got {len(self.channel_mults)}")
        if any(m < 1 for m in self.channel_mults):
            raise ValueError("channel multipliers must be >= 1")
        if self.base_channels < 1:
            raise ValueError("base_channels must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.max_scale <= 1.0:
            raise ValueError(f"max_scale must exceed 1, got {self.max_scale}")

    @property
    def widths(self) -> list[int]:
        """Encoder channels at depths 1..N."""
        return [self.base_channels * m for m in self.channel_mults]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_mults"] = list(self.channel_mults)
        return d


def output_size(h: int, w: int, s: float) -> tuple[int, int]:
    """round(s * h) x round(s * w), halves rounded away from zero."""
    def r(x):
        return int(math.floor(x + 0.5))
    return r(s * h), r(s * w)


def _groups(ch: int) -> int:
    for g in (8, 4, 2):
        if ch % g == 0 and ch // g >= 4:
            return g
    return 1


class GammaEmbedding(nn.Module):
    """Sinusoidal features of gamma followed by a two-layer MLP."""

    def __init__(self, dim: int, out_dim: int):
        super().__init__()
        if dim % 2:
            raise ValueError("embedding dim must be even")
        self.dim = dim
        self.fc1 = nn.Linear(dim, out_dim)
        self.fc2 = nn.Linear(out_dim, out_dim)

    def sinusoid(self, gamma: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(-math.log(10000.0) *
                          torch.arange(half, dtype=torch.float64) / half)
        arg = 1000.0 * gamma.to(torch.float64)[:, None] * freqs[None, :]
        return torch.cat([torch.sin(arg), torch.cos(arg)], dim=1)

    def forward(self, gamma: torch.Tensor) -> torch.Tensor:
        e = self.sinusoid(gamma).to(self.fc1.weight.dtype)
        return self.fc2(F.silu(self.fc1(e)))


class ResBlock(nn.Module):
    """GroupNorm-SiLU-conv residual block with an additive noise-level shift."""

    def __init__(self, in_ch: int, out_ch: int, emb_dim: int, dropout: float):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.emb = nn.Linear(emb_dim, out_ch)
        self.norm2 = nn.GroupNorm(_groups(out_ch), out_ch)
        self.dropout = nn.Dropout(dropout)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb(F.silu(emb))[:, :, None, None]
        h = self.conv2(self.dropout(F.silu(self.norm2(h))))
        return self.skip(x) + h


class Denoiser(nn.Module):
    def __init__(self, config: DenoiserConfig | None = None):
        super().__init__()
        cfg = config or DenoiserConfig()
        self.config = cfg
        base = cfg.base_channels
        widths = cfg.widths
        fused = [2 * c for c in widths]
        emb_dim = 4 * base
        self.emb_dim = emb_dim

        self.extractor = FeatureExtractor(cfg.image_channels, cfg.extractor_channels,
                                          cfg.extractor_blocks)
        self.pyramid = ConditioningPyramid(cfg.extractor_channels, fused)
        self.scale_mlp = AdaptiveMLP(fused, hidden=cfg.scale_hidden)
        self.gamma_embed = GammaEmbedding(base, emb_dim)

        self.stem = nn.Conv2d(cfg.image_channels + cfg.extractor_channels, base, 3, padding=1)
        chans = [base] + widths
        self.down = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1)
            for i in range(cfg.depth))
        self.enc = nn.ModuleList(
            ResBlock(widths[i], widths[i], emb_dim, cfg.dropout) for i in range(cfg.depth))
        self.mid = ResBlock(widths[-1], widths[-1], emb_dim, cfg.dropout)
        self.dec = nn.ModuleList(
            ResBlock(fused[i], widths[i], emb_dim, cfg.dropout) for i in range(cfg.depth))
        # implicit[i] decodes depth i+1 onto the depth-i grid, emitting chans[i]
        self.implicit = nn.ModuleList(
            ImplicitLayer(widths[i], chans[i], hidden=cfg.implicit_hidden)
            for i in range(cfg.depth))
        self.out_block = ResBlock(2 * base, base, emb_dim, cfg.dropout)
        self.head_norm = nn.GroupNorm(_groups(base), base)
        self.head = nn.Conv2d(base, cfg.image_channels, 3, padding=1)

    # -- pieces -------------------------------------------------------------

    def embed_gamma(self, gamma_t, batch: int) -> torch.Tensor:
        g = torch.as_tensor(gamma_t, dtype=torch.float64).reshape(-1)
        if g.numel() == 1:
            g = g.expand(batch)
        elif g.numel() != batch:
            raise ValueError(f"{g.numel()} gamma values for batch of {batch}")
        return self.gamma_embed(g)

    def encode(self, x: torch.Tensor, emb: torch.Tensor):
        """Stem + N strided stages; returns ``(u0, [u_down_1..u_down_N])``."""
        halving_ladder(x.shape[-2], x.shape[-1], self.config.depth)
        u0 = self.stem(x)
        feats = []
        h = u0
        for down, block in zip(self.down, self.enc):
            h = block(down(h), emb)
            feats.append(h)
        return u0, feats

    def decode(self, u_bottom, u_down, pyramid, alphas, grids, emb, u0):
        N = self.config.depth
        if not (len(u_down) == len(pyramid) - 1 == len(alphas) == len(grids) - 1 == N):
            raise ValueError("pyramid, alphas, grids and encoder depths must all equal N")
        u_up = u_bottom
        h = None
        for i in range(N, 0, -1):
            if i < N:
                u_up = implicit_upsample(h, grids[i], self.implicit[i])
            a1, a2 = normalize_alphas(*alphas[i - 1])
            h = fuse(pyramid[i], u_up, u_down[i - 1], a1, a2)
            h = self.dec[i - 1](h, emb)
        u_up0 = implicit_upsample(h, grids[0], self.implicit[0])
        out = self.out_block(torch.cat([u_up0, u0], dim=1), emb)
        return self.head(F.silu(self.head_norm(out)))

    # -- full pass ------------------------------------------------------------

    def forward(self, x_lr: torch.Tensor, y_t: torch.Tensor, gamma_t, s,
                extrapolate: bool = False) -> torch.Tensor:
        """Predict the noise in ``y_t``.

        ``s`` must lie in (1, max_scale]; ``extrapolate=True`` lifts the upper
        bound for out-of-range inference. ``y_t`` must be
        ``output_size(h_lr, w_lr, s)``.
        """
        s_val = float(s)
        if not s_val > 1.0:
            raise ValueError(f"scale factor must exceed 1, got {s_val}")
        if s_val > self.config.max_scale and not extrapolate:
            raise ValueError(
                f"scale factor {s_val} above max_scale {self.config.max_scale}")
        H, W = output_size(x_lr.shape[-2], x_lr.shape[-1], s_val)
        if tuple(y_t.shape[-2:]) != (H, W):
            raise ValueError(
                f"y_t is {tuple(y_t.shape[-2:])}, expected {(H, W)} for scale {s_val}")
        if x_lr.shape[0] != y_t.shape[0]:
            raise ValueError("batch sizes of x_lr and y_t differ")

        sizes = halving_ladder(H, W, self.config.depth)
        grids = [make_grid(h, w) for h, w in sizes]
        emb = self.embed_gamma(gamma_t, y_t.shape[0])

        f0 = extract_initial_features(self.extractor, x_lr, H, W)
        u0, u_down = self.encode(torch.cat([f0, y_t], dim=1), emb)
        u_bottom = self.mid(u_down[-1], emb)
        pyramid = build_pyramid(f0, self.pyramid)
        alphas = scale_to_alphas(s_val, self.scale_mlp)
        return self.decode(u_bottom, u_down, pyramid, alphas, grids, emb, u0)

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        """Top-level submodule name -> parameters."""
        groups: dict[str, list[nn.Parameter]] = {}
        for name, p in self.named_parameters():
            groups.setdefault(name.split(".")[0], []).append(p)
        return groups
