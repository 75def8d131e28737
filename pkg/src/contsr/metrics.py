"""PSNR, SSIM and LR consistency.

All functions take (C, H, W) or (H, W) tensors/arrays on a common scale;
the evaluation pipeline feeds [0, 1] RGB.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

from .data import bicubic_resize

PSNR_CAP = 100.0


def _as_tensor(x) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(x) if not torch.is_tensor(x) else x)
    return t.to(torch.float64)


def _pair(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(((a - b) ** 2).mean())


def psnr(a, b, peak: float = 1.0) -> float:
    if peak <= 0:
        raise ValueError("peak must be positive")
    err = mse(a, b)
    if err < peak * peak * 1e-10:
        return PSNR_CAP
    return 10.0 * math.log10(peak * peak / err)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(x ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return g[:, None] * g[None, :]


def ssim(a, b, peak: float = 1.0, window: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over valid-window positions, averaged over channels."""
    a, b = _pair(a, b)
    if a.dim() == 2:
        a, b = a[None], b[None]
    if a.shape[-1] < window or a.shape[-2] < window:
        raise ValueError(f"image {tuple(a.shape[-2:])} smaller than {window}x{window} window")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    k = gaussian_window(window, sigma)[None, None]
    x, y = a[:, None], b[:, None]  # channels as batch

    def blur(z):
        return F.conv2d(z, k)

    mu_x, mu_y = blur(x), blur(y)
    sxx = blur(x * x) - mu_x ** 2
    syy = blur(y * y) - mu_y ** 2
    sxy = blur(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return float((num / den).mean())


def consistency(x_lr, sr) -> float:
    """MSE between ``x_lr`` and ``sr`` downsampled to its size, in units of 1e-5."""
    x, y = _as_tensor(x_lr), _as_tensor(sr)
    if x.dim() != y.dim() or x.shape[:-2] != y.shape[:-2]:
        raise ValueError(f"incompatible shapes {tuple(x.shape)} and {tuple(y.shape)}")
    if y.shape[-2] < x.shape[-2] or y.shape[-1] < x.shape[-1]:
        raise ValueError("SR image must be at least as large as the LR image")
    squeeze = y.dim() == 2
    down = bicubic_resize(y[None] if squeeze else y, tuple(x.shape[-2:]))
    down = down[0] if squeeze else down
    return mse(x, down) * 1e5
