"""Resampling, LR/HR pair generation and image-folder datasets."""

from __future__ import annotations

from pathlib import Path

import torch
import torch.nn.functional as F

from .denoiser import output_size
from .imageio import IMAGE_SUFFIXES, load_image


class DataError(Exception):
    """Unusable dataset or image."""


def bicubic_resize(img: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Antialiased bicubic resize of (C, H, W) or (B, C, H, W); identity when sizes match."""
    squeeze = img.dim() == 3
    x = img[None] if squeeze else img
    if tuple(x.shape[-2:]) != tuple(size):
        x = F.interpolate(x, size=tuple(size), mode="bicubic", align_corners=False,
                          antialias=True)
    return x[0] if squeeze else x


def degrade(hr: torch.Tensor, s: float, lr_size: int | tuple[int, int],
            max_scale: float | None = None):
    """Make an (x_lr, y0) pair from an HR image or batch.

    ``x_lr`` is ``hr`` downsampled to ``lr_size``; ``y0`` is ``hr`` resized to
    ``round(s * lr_size)``. Both are clamped to [-1, 1] after resampling.
    """
    lh, lw = (lr_size, lr_size) if isinstance(lr_size, int) else lr_size
    m = s if max_scale is None else max(s, max_scale)
    need = output_size(lh, lw, m)
    if hr.shape[-2] < need[0] or hr.shape[-1] < need[1]:
        raise DataError(
            f"HR image {tuple(hr.shape[-2:])} smaller than required {need}")
    x_lr = bicubic_resize(hr, (lh, lw)).clamp(-1.0, 1.0)
    y0 = bicubic_resize(hr, output_size(lh, lw, s)).clamp(-1.0, 1.0)
    return x_lr, y0


def center_square(img: torch.Tensor) -> torch.Tensor:
    h, w = img.shape[-2:]
    n = min(h, w)
    top, left = (h - n) // 2, (w - n) // 2
    return img[..., top:top + n, left:left + n]


def list_images(root: str | Path) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DataError(f"no images found in {root}")
    return files


def load_hr_folder(root: str | Path, hr_size: int) -> tuple[torch.Tensor, list[str]]:
    """Load every image, centre-crop to square and resize to ``hr_size``.

    Returns a (N, 3, hr_size, hr_size) tensor in [-1, 1] and the file stems.
    """
    files = list_images(root)
    imgs = []
    for f in files:
        try:
            img = load_image(f)
        except (OSError, ValueError) as e:
            raise DataError(f"cannot read {f}: {e}") from e
        imgs.append(bicubic_resize(center_square(img), (hr_size, hr_size)).clamp(-1.0, 1.0))
    return torch.stack(imgs), [f.stem for f in files]
