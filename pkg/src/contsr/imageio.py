"""8-bit RGB image <-> [-1, 1] tensor conversion."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"}


def from_uint8(arr: np.ndarray) -> torch.Tensor:
    """(H, W, 3) uint8 -> (3, H, W) float32 via p -> 2p/255 - 1."""
    x = torch.tensor(np.asarray(arr, dtype=np.uint8)).permute(2, 0, 1).to(torch.float32)
    return x * (2.0 / 255.0) - 1.0


def to_uint8(img: torch.Tensor) -> np.ndarray:
    """(3, H, W) in [-1, 1] -> (H, W, 3) uint8; clamps, then rounds half up."""
    x = img.detach().to(torch.float64).clamp(-1.0, 1.0)
    p = torch.floor((x + 1.0) * 127.5 + 0.5).clamp(0, 255).to(torch.uint8)
    return p.permute(1, 2, 0).contiguous().numpy()


def load_image(path: str | Path) -> torch.Tensor:
    with Image.open(path) as im:
        return from_uint8(np.asarray(im.convert("RGB")))


def save_image(img: torch.Tensor, path: str | Path) -> None:
    Image.fromarray(to_uint8(img)).save(path, format="PNG")


def to_unit(img: torch.Tensor) -> torch.Tensor:
    """[-1, 1] -> [0, 1]."""
    return (img.clamp(-1.0, 1.0) + 1.0) / 2.0
