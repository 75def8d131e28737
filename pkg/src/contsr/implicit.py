"""Coordinate-based implicit upsampling used in the decoder.

A feature map at one resolution is queried at the cell centres of another
grid. Each query takes the feature of the nearest source cell and the offset
from that cell's centre, and a small MLP decodes the pair into the output
feature. Any target size is legal, which is what makes non-integer
magnification possible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

HIDDEN = 256
# slack for detecting cell-boundary ties under float rounding
_TIE_TOL = 1e-9


def axis_centers(n: int, dtype=torch.float64) -> torch.Tensor:
    """Cell-centre coordinates ``-1 + (2k + 1) / n`` for ``k = 0..n-1``."""
    k = torch.arange(n, dtype=torch.float64)
    return ((2 * k + 1) / n - 1).to(dtype)


@dataclass(frozen=True)
class CoordinateGrid:
    height: int
    width: int
    coords: torch.Tensor  # (H, W, 2) as (row, col)

    @property
    def rows(self) -> torch.Tensor:
        return self.coords[:, 0, 0]

    @property
    def cols(self) -> torch.Tensor:
        return self.coords[0, :, 1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width


def make_grid(h: int, w: int) -> CoordinateGrid:
    if h < 1 or w < 1:
        raise ValueError(f"grid dims must be positive, got {h}x{w}")
    r = axis_centers(h)
    c = axis_centers(w)
    coords = torch.stack(torch.meshgrid(r, c, indexing="ij"), dim=-1)
    return CoordinateGrid(int(h), int(w), coords)


def _nearest_index(query: torch.Tensor, n: int) -> torch.Tensor:
    # Centre k covers ((2k)/n - 1, (2k+2)/n - 1]; a query exactly on a
    # boundary goes to the smaller index.
    x = (query.to(torch.float64) + 1) * n / 2
    idx = torch.ceil(x - _TIE_TOL).long() - 1
    return idx.clamp_(0, n - 1)


def nearest_indices(src_shape: tuple[int, int], tgt_grid: CoordinateGrid):
    """Nearest source cell and offset ``c - c_hat`` for every target pixel.

    On a rectilinear grid the squared Euclidean distance separates by axis,
    so the 2-D nearest neighbour is the per-axis nearest neighbour. Returns
    ``(row_idx, col_idx, rel)`` with ``rel`` of shape (H, W, 2).
    """
    h, w = src_shape
    if h < 1 or w < 1:
        raise ValueError("empty source feature map")
    ri = _nearest_index(tgt_grid.rows, h)
    ci = _nearest_index(tgt_grid.cols, w)
    rel_r = tgt_grid.rows.to(torch.float64) - axis_centers(h)[ri]
    rel_c = tgt_grid.cols.to(torch.float64) - axis_centers(w)[ci]
    rel = torch.stack(torch.broadcast_tensors(rel_r[:, None], rel_c[None, :]), dim=-1)
    return ri, ci, rel


def nearest_lookup(src: torch.Tensor, tgt_grid: CoordinateGrid):
    """Gather the nearest source feature for each target pixel.

    ``src`` is (B, C, h, w) on the cell-centre grid of its own size. Returns
    ``(feat, rel)`` with ``feat`` of shape (B, C, H, W) and ``rel`` of shape
    (H, W, 2).
    """
    if src.dim() != 4:
        raise ValueError(f"expected (B, C, h, w) features, got {tuple(src.shape)}")
    if src.shape[1] == 0:
        raise ValueError("empty source feature map")
    ri, ci, rel = nearest_indices(tuple(src.shape[-2:]), tgt_grid)
    return src[:, :, ri][:, :, :, ci], rel


class ImplicitLayer(nn.Module):
    """Two-layer perceptron decoding (feature, relative offset) -> feature."""

    def __init__(self, in_channels: int, out_channels: int, hidden: int = HIDDEN,
                 slope: float = 0.2):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.fc1 = nn.Linear(in_channels + 2, hidden)
        self.fc2 = nn.Linear(hidden, out_channels)
        self.slope = slope

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Plain evaluation on (..., in_channels + 2) inputs."""
        return self.fc2(F.leaky_relu(self.fc1(x), self.slope))


def implicit_upsample(h_next: torch.Tensor, tgt_grid: CoordinateGrid,
                      layer: ImplicitLayer) -> torch.Tensor:
    """Decode ``h_next`` (B, C, h, w) onto ``tgt_grid``; returns (B, C_out, H, W).

    Offsets are expressed in units of the source cell half-width, so the MLP
    sees values in [-1, 1] whatever the resolution.

    The first linear layer splits as ``W_f @ feat + W_r @ rel``. ``W_f`` is
    applied at the source resolution before the gather, which is exact
    because the gather only copies.
    """
    if h_next.dim() != 4 or h_next.shape[1] != layer.in_channels:
        raise ValueError(
            f"layer expects (B, {layer.in_channels}, h, w), got {tuple(h_next.shape)}")
    B = h_next.shape[0]
    h, w = h_next.shape[-2:]
    ri, ci, rel = nearest_indices((h, w), tgt_grid)
    rel = scaled_offsets(rel, (h, w)).to(h_next.dtype)

    c = layer.in_channels
    w1 = layer.fc1.weight
    feats = h_next.permute(0, 2, 3, 1).reshape(B, h * w, c)
    proj = F.linear(feats, w1[:, :c])
    flat = (ri[:, None] * w + ci[None, :]).reshape(-1)
    pos = F.linear(rel.reshape(-1, 2), w1[:, c:], layer.fc1.bias)
    hid = proj.index_select(1, flat)
    hid.add_(pos)
    F.leaky_relu_(hid, layer.slope)
    out = F.linear(hid, layer.fc2.weight, layer.fc2.bias)
    return out.reshape(B, tgt_grid.height, tgt_grid.width, -1).permute(0, 3, 1, 2)


def scaled_offsets(rel: torch.Tensor, src_shape: tuple[int, int]) -> torch.Tensor:
    """Offsets in the units :func:`implicit_upsample` feeds the MLP."""
    h, w = src_shape
    return rel * torch.tensor([h, w], dtype=rel.dtype)


def halving_ladder(h: int, w: int, depth: int) -> list[tuple[int, int]]:
    """Sizes at depths ``0..depth`` with ceil-halving; raises if a level degenerates."""
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    sizes = [(int(h), int(w))]
    for _ in range(depth):
        ph, pw = sizes[-1]
        if ph <= 1 and pw <= 1:
            raise ValueError(
                f"{h}x{w} cannot be halved {depth} times before reaching 1x1")
        sizes.append((math.ceil(ph / 2), math.ceil(pw / 2)))
    return sizes
