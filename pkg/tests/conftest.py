import numpy as np
import pytest
import torch
from PIL import Image

from contsr.denoiser import Denoiser, DenoiserConfig

_CRITERIA: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[k])


@pytest.fixture
def criterion():
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(number: int, name: str, ok: bool, detail: str = ""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {name}"
        if detail:
            line += f"  ({detail})"
        _CRITERIA[number] = line
        print(line)
        return ok

    return record


@pytest.fixture
def tiny_config():
    # small enough that a forward pass at 32x32 takes milliseconds
    return DenoiserConfig(depth=2, base_channels=8, channel_mults=(1, 2), dropout=0.0,
                          max_scale=4.0, extractor_channels=8, extractor_blocks=1,
                          scale_hidden=16, implicit_hidden=16)


@pytest.fixture
def tiny_model(tiny_config):
    torch.manual_seed(0)
    return Denoiser(tiny_config)


def write_png(path, h, w, seed=0):
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    Image.fromarray(arr).save(path)
    return arr


@pytest.fixture
def png_folder(tmp_path):
    d = tmp_path / "hr"
    d.mkdir()
    for i in range(4):
        write_png(d / f"img{i}.png", 40 + 4 * i, 36, seed=i)
    return d
