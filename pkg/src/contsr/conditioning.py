"""LR conditioning network and scale-factor modulation.

The LR image is embedded by a shallow residual CNN, resized to the working
resolution, then pushed down a pyramid of conv + bilinear-downsample + leaky
stages. A small MLP maps the scale factor to per-depth, per-channel weight
pairs that blend the pyramid features with the U-Net's own features.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

DELTA = 1e-8
SLOPE = 0.2


class ResBlock(nn.Module):
    """EDSR residual block: conv-relu-conv plus identity, no normalisation."""

    def __init__(self, channels: int, res_scale: float = 1.0):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.res_scale = res_scale

    def forward(self, x):
        return x + self.res_scale * self.conv2(F.relu(self.conv1(x)))


class FeatureExtractor(nn.Module):
    """Reduced EDSR body producing the initial LR feature."""

    def __init__(self, in_channels: int = 3, channels: int = 32, n_blocks: int = 4):
        super().__init__()
        self.head = nn.Conv2d(in_channels, channels, 3, padding=1)
        self.blocks = nn.Sequential(*[ResBlock(channels) for _ in range(n_blocks)])
        self.tail = nn.Conv2d(channels, channels, 3, padding=1)
        self.out_channels = channels

    def forward(self, x):
        x = self.head(x)
        return x + self.tail(self.blocks(x))


def extract_initial_features(extractor: FeatureExtractor, x_lr: torch.Tensor,
                             target_h: int, target_w: int) -> torch.Tensor:
    f = extractor(x_lr)
    if tuple(f.shape[-2:]) == (target_h, target_w):
        return f
    return F.interpolate(f, size=(target_h, target_w), mode="bilinear",
                         align_corners=False)


class DownConv(nn.Module):
    """Bilinear downsample to ceil(h/2) x ceil(w/2) -> conv3x3 -> leaky ReLU.

    Downsampling first keeps the convolution at the coarse resolution.
    """

    def __init__(self, in_channels: int, out_channels: int, slope: float = SLOPE):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.slope = slope

    def forward(self, x):
        h, w = x.shape[-2:]
        x = F.interpolate(x, size=(math.ceil(h / 2), math.ceil(w / 2)),
                          mode="bilinear", align_corners=False)
        return F.leaky_relu(self.conv(x), self.slope)


class ConditioningPyramid(nn.Module):
    def __init__(self, in_channels: int, widths: list[int]):
        super().__init__()
        chans = [in_channels] + list(widths)
        self.stages = nn.ModuleList(
            DownConv(chans[i], chans[i + 1]) for i in range(len(widths)))

    @property
    def depth(self) -> int:
        return len(self.stages)

    def forward(self, f0: torch.Tensor) -> list[torch.Tensor]:
        return build_pyramid(f0, self)


def build_pyramid(f0: torch.Tensor, pyramid: ConditioningPyramid,
                  N: int | None = None) -> list[torch.Tensor]:
    """Return ``[f0, f1, ..., fN]``, each level the ceil-half of the previous."""
    N = pyramid.depth if N is None else N
    if N < 1 or N > pyramid.depth:
        raise ValueError(f"depth {N} not in 1..{pyramid.depth}")
    levels = [f0]
    for stage in list(pyramid.stages)[:N]:
        h, w = levels[-1].shape[-2:]
        if h <= 1 and w <= 1:
            raise ValueError(
                f"pyramid of depth {N} degenerates below 1x1 from {tuple(f0.shape[-2:])}")
        levels.append(stage(levels[-1]))
    return levels


class AdaptiveMLP(nn.Module):
    """Maps the scalar scale factor to ``2 * sum(widths)`` modulation values."""

    def __init__(self, widths: list[int], hidden: int = 256, slope: float = SLOPE):
        super().__init__()
        self.widths = list(widths)
        self.fc1 = nn.Linear(1, hidden)
        self.fc2 = nn.Linear(hidden, 2 * sum(self.widths))
        self.slope = slope

    def forward(self, s: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.leaky_relu(self.fc1(s), self.slope))


def scale_to_alphas(s, mlp: AdaptiveMLP, widths: list[int] | None = None):
    """Return ``[(a1, a2), ...]`` per depth, each vector of length ``widths[i]``.

    ``s`` is a float or a (B,) tensor; vectors are (C,) or (B, C) accordingly.
    """
    widths = mlp.widths if widths is None else list(widths)
    if widths != mlp.widths:
        raise ValueError(f"mlp built for widths {mlp.widths}, asked for {widths}")
    dtype = mlp.fc1.weight.dtype
    batched = torch.is_tensor(s) and s.dim() > 0
    s_in = torch.as_tensor(s, dtype=dtype).reshape(-1, 1)
    out = mlp(s_in)
    alphas = []
    off = 0
    for c in widths:
        a1 = out[:, off:off + c]
        a2 = out[:, off + c:off + 2 * c]
        off += 2 * c
        alphas.append((a1, a2) if batched else (a1[0], a2[0]))
    return alphas


def normalize_alphas(a1: torch.Tensor, a2: torch.Tensor, delta: float = DELTA):
    if a1.shape != a2.shape:
        raise ValueError(f"alpha shapes differ: {tuple(a1.shape)} vs {tuple(a2.shape)}")
    denom = torch.sqrt(a1 * a1 + a2 * a2 + delta)
    return a1.abs() / denom, a2.abs() / denom


def _per_channel(a: torch.Tensor) -> torch.Tensor:
    # (C,) or (B, C) -> broadcastable over (B, C, H, W)
    if a.dim() == 1:
        return a[None, :, None, None]
    return a[:, :, None, None]


def fuse(f_i: torch.Tensor, u_up: torch.Tensor, u_down: torch.Tensor,
         a1_bar: torch.Tensor, a2_bar: torch.Tensor) -> torch.Tensor:
    """``a1 * f + a2 * concat(u_up, u_down)`` with per-channel weights."""
    if u_up.shape[-2:] != u_down.shape[-2:] or f_i.shape[-2:] != u_up.shape[-2:]:
        raise ValueError(
            f"spatial mismatch: f {tuple(f_i.shape)}, up {tuple(u_up.shape)}, "
            f"down {tuple(u_down.shape)}")
    u = torch.cat([u_up, u_down], dim=1)
    c = u.shape[1]
    if f_i.shape[1] != c or a1_bar.shape[-1] != c or a2_bar.shape[-1] != c:
        raise ValueError(
            f"channel mismatch: f has {f_i.shape[1]}, concat has {c}, "
            f"weights have {a1_bar.shape[-1]}/{a2_bar.shape[-1]}")
    return _per_channel(a1_bar) * f_i + _per_channel(a2_bar) * u
