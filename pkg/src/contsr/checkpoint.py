"""Checkpoint archive: named little-endian raw tensors plus a JSON metadata block.

Layout (a zip archive, stored uncompressed, fixed timestamps so identical
content gives identical bytes)::

    metadata.json   {"format_version": 1, ..., "tensors": [{name, dtype, shape, offset, nbytes}]}
    tensors.bin     concatenated raw payloads in index order

Parameters are written as ``<f4``; RNG states as ``u1``. Names are
hierarchical: ``model/<param>``, ``optim/<param>/exp_avg``, ``rng/torch``.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

FORMAT_VERSION = 1
_DTYPES = {"f4": (np.dtype("<f4"), torch.float32), "u1": (np.dtype("u1"), torch.uint8)}
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(Exception):
    """Missing, corrupt or incompatible checkpoint."""


def _code_for(t: torch.Tensor) -> str:
    if t.dtype == torch.uint8:
        return "u1"
    if t.is_floating_point():
        return "f4"
    raise CheckpointError(f"unsupported tensor dtype {t.dtype}")


def write_archive(path: str | Path, tensors: dict[str, torch.Tensor], meta: dict) -> None:
    index = []
    payload = io.BytesIO()
    for name, t in tensors.items():
        code = _code_for(t)
        arr = t.detach().cpu().numpy().astype(_DTYPES[code][0], copy=False)
        raw = np.ascontiguousarray(arr).tobytes()
        index.append({"name": name, "dtype": code, "shape": list(arr.shape),
                      "offset": payload.tell(), "nbytes": len(raw)})
        payload.write(raw)
    doc = {"format_version": FORMAT_VERSION, **meta, "tensors": index}
    text = json.dumps(doc, indent=1).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, data in (("metadata.json", text), ("tensors.bin", payload.getvalue())):
            info = zipfile.ZipInfo(name, date_time=_EPOCH)
            info.external_attr = 0o644 << 16
            zf.writestr(info, data)
    tmp.replace(path)


def read_archive(path: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("metadata.json").decode("utf-8"))
            blob = zf.read("tensors.bin")
    except (OSError, KeyError, zipfile.BadZipFile, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format_version {meta.get('format_version')!r}")
    tensors = {}
    for entry in meta.pop("tensors"):
        np_dtype, torch_dtype = _DTYPES[entry["dtype"]]
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(blob):
            raise CheckpointError(f"tensor {entry['name']} truncated")
        arr = np.frombuffer(blob, dtype=np_dtype, count=n // np_dtype.itemsize, offset=start)
        tensors[entry["name"]] = torch.from_numpy(
            arr.reshape(entry["shape"]).copy()).to(torch_dtype)
    return tensors, meta


def optimizer_tensors(model: torch.nn.Module, opt: torch.optim.Optimizer):
    """Adam moments keyed by parameter name, plus per-parameter step counts."""
    state = opt.state
    tensors, steps = {}, {}
    for name, p in model.named_parameters():
        st = state.get(p)
        if not st:
            continue
        tensors[f"optim/{name}/exp_avg"] = st["exp_avg"]
        tensors[f"optim/{name}/exp_avg_sq"] = st["exp_avg_sq"]
        steps[name] = float(st["step"])
    return tensors, steps


def restore_optimizer(model: torch.nn.Module, opt: torch.optim.Optimizer,
                      tensors: dict[str, torch.Tensor], steps: dict[str, float]) -> None:
    for name, p in model.named_parameters():
        if name not in steps:
            continue
        opt.state[p] = {
            "step": torch.tensor(steps[name], dtype=torch.float32),
            "exp_avg": tensors[f"optim/{name}/exp_avg"].to(p.dtype).clone(),
            "exp_avg_sq": tensors[f"optim/{name}/exp_avg_sq"].to(p.dtype).clone(),
        }


def model_tensors(model: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {f"model/{k}": v for k, v in model.state_dict().items()}


def load_model_tensors(model: torch.nn.Module, tensors: dict[str, torch.Tensor]) -> None:
    sd = {k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")}
    try:
        model.load_state_dict(sd, strict=True)
    except RuntimeError as e:
        raise CheckpointError(f"checkpoint does not match model: {e}") from e
