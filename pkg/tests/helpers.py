"""Test helpers shared by module tests and the acceptance suite."""

import numpy as np
import torch

from contsr.data import bicubic_resize, center_square
from contsr.denoiser import Denoiser, DenoiserConfig, output_size
from contsr.implicit import nearest_lookup, scaled_offsets
from contsr.imageio import from_uint8

AUDIT_GROUPS = {
    "encoder": ("stem", "down", "enc"),
    "pyramid": ("pyramid",),
    "adaptive_mlp": ("scale_mlp",),
    "implicit": ("implicit",),
}


def audit_config():
    """Micro network for gradient checks: depth 2, 8 channels."""
    return DenoiserConfig(depth=2, base_channels=8, channel_mults=(1, 1), dropout=0.0,
                          max_scale=4.0, extractor_channels=8, extractor_blocks=1,
                          scale_hidden=16, implicit_hidden=16)


def audit_problem(seed=0):
    """Model, inputs and a scalar objective at an 8x8 working resolution, float64."""
    torch.manual_seed(seed)
    model = Denoiser(audit_config()).double()
    model.eval()
    g = torch.Generator().manual_seed(seed + 1)
    s = 2.0
    x_lr = torch.rand(2, 3, 4, 4, generator=g, dtype=torch.float64) * 2 - 1
    H, W = output_size(4, 4, s)
    y_t = torch.randn(2, 3, H, W, generator=g, dtype=torch.float64)
    gamma = torch.tensor([0.3, 0.8], dtype=torch.float64)
    proj = torch.randn(2, 3, H, W, generator=g, dtype=torch.float64)

    def objective():
        return (model(x_lr, y_t, gamma, s) * proj).sum()

    return model, objective


def finite_difference_audit(n_per_group=3, eps=1e-6, seed=0):
    """Compare analytic and central-difference derivatives on random scalar parameters.

    Returns a list of (name, index, analytic, numeric, relative error).
    """
    model, objective = audit_problem(seed)
    model.zero_grad()
    objective().backward()
    rng = np.random.default_rng(seed)
    named = dict(model.named_parameters())
    rows = []
    for prefixes in AUDIT_GROUPS.values():
        names = [n for n in named if n.split(".")[0] in prefixes]
        for _ in range(n_per_group):
            name = names[rng.integers(len(names))]
            p = named[name]
            flat = p.data.view(-1)
            k = int(rng.integers(flat.numel()))
            analytic = p.grad.view(-1)[k].item()
            old = flat[k].item()
            with torch.no_grad():
                flat[k] = old + eps
                up = objective().item()
                flat[k] = old - eps
                down = objective().item()
                flat[k] = old
            numeric = (up - down) / (2 * eps)
            denom = max(abs(analytic), abs(numeric), 1e-8)
            rows.append((name, k, analytic, numeric, abs(analytic - numeric) / denom))
    return rows


def dead_parameters(seed=0):
    """Names of parameters whose gradient is identically zero on a random batch."""
    model, objective = audit_problem(seed)
    model.zero_grad()
    objective().backward()
    return [n for n, p in model.named_parameters()
            if p.grad is None or not torch.any(p.grad != 0)]


def exhaustive_nearest(src_hw, tgt_hw):
    """Brute-force nearest source pixel in exact integer arithmetic.

    Centre k on an axis of n cells is (2k + 1 - n) / n. Differences along an
    axis share the denominator m*n, so squared distances scale to integers.
    Ties resolve to the first minimum in row-major order.
    """
    (h, w), (H, W) = src_hw, tgt_hw
    dr = ((2 * np.arange(H)[:, None] + 1 - H) * h - (2 * np.arange(h)[None, :] + 1 - h) * H)
    dc = ((2 * np.arange(W)[:, None] + 1 - W) * w - (2 * np.arange(w)[None, :] + 1 - w) * W)
    Dr, Dc = H * h, W * w
    d2 = (dr[:, None, :, None] ** 2 * Dc ** 2 + dc[None, :, None, :] ** 2 * Dr ** 2)
    flat = d2.reshape(H, W, h * w).astype(np.int64)
    best = flat.argmin(-1)
    ri, ci = best // w, best % w
    rel_r = dr[np.arange(H)[:, None], ri] / Dr
    rel_c = dc[np.arange(W)[None, :], ci] / Dc
    return ri, ci, np.stack([rel_r, rel_c], -1)


def direct_mlp(h_next, grid, layer):
    """Reference: gather, concatenate and call the layer as a plain MLP."""
    feat, rel = nearest_lookup(h_next, grid)
    rel = scaled_offsets(rel, tuple(h_next.shape[-2:])).to(h_next.dtype)
    B = h_next.shape[0]
    x = torch.cat([feat.permute(0, 2, 3, 1),
                   rel[None].expand(B, -1, -1, -1)], dim=-1)
    return layer(x).permute(0, 3, 1, 2)


OVERFIT_IMAGES = ("astronaut", "chelsea", "coffee", "rocket", "hubble_deep_field", "retina",
                  "immunohistochemistry", "motorcycle_left")


def overfit_dataset(hr_size=64):
    """Eight photographs bundled with scikit-image, centre-cropped and resized to HR size."""
    from skimage import data as skdata

    imgs = []
    for name in OVERFIT_IMAGES:
        arr = skdata.stereo_motorcycle()[0] if name == "motorcycle_left" \
            else getattr(skdata, name)()
        x = from_uint8(arr[..., :3])
        imgs.append(bicubic_resize(center_square(x), (hr_size, hr_size)).clamp(-1, 1))
    return torch.stack(imgs), list(OVERFIT_IMAGES)
