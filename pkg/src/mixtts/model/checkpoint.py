"""Versioned single-file checkpoint.

Layout (little-endian)::

    b"MXTTS1" | u16 version | u32 meta_len | meta (UTF-8 JSON)
    u32 n_tensors | n_tensors * tensor
    u8 has_optimizer | [u32 optim_meta_len | optim meta JSON | u32 n | n * tensor]

    tensor := u16 name_len | name | u8 ndim | ndim * u32 dims | float32 data

``meta`` holds the serialized ModelConfig plus free-form metadata (vocab,
registry, run info).  JSON is written with sorted keys so identical
training runs produce identical bytes.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig
from .network import AcousticModel

MAGIC = b"MXTTS1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_tensor(fh, name: str, t: torch.Tensor) -> None:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("unexpected end of checkpoint")
    return data


def _read_tensor(fh) -> tuple[str, torch.Tensor]:
    (n,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, n).decode("utf-8")
    (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
    shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim)) if ndim else ()
    count = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4").reshape(shape)
    return name, torch.from_numpy(arr.astype(np.float32))


def _write_json(fh, obj) -> None:
    raw = json.dumps(obj, sort_keys=True, ensure_ascii=False).encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def _read_json(fh):
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    return json.loads(_read_exact(fh, n).decode("utf-8"))


def _optimizer_tensors(optimizer: torch.optim.Optimizer):
    sd = optimizer.state_dict()
    tensors = []
    for idx in sorted(sd["state"]):
        for key in sorted(sd["state"][idx]):
            val = sd["state"][idx][key]
            tensors.append((f"{idx}/{key}", torch.as_tensor(val, dtype=torch.float32)))
    groups = [{k: v for k, v in g.items()} for g in sd["param_groups"]]
    return {"param_groups": groups}, tensors


def save_checkpoint(
    path: str | Path,
    model: AcousticModel,
    metadata: dict | None = None,
    optimizer: torch.optim.Optimizer | None = None,
) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    _write_json(buf, {"config": model.cfg.to_dict(), "metadata": metadata or {}})
    state = model.state_dict()
    buf.write(struct.pack("<I", len(state)))
    for name in state:
        _write_tensor(buf, name, state[name])
    if optimizer is None:
        buf.write(struct.pack("<B", 0))
    else:
        buf.write(struct.pack("<B", 1))
        meta, tensors = _optimizer_tensors(optimizer)
        _write_json(buf, meta)
        buf.write(struct.pack("<I", len(tensors)))
        for name, t in tensors:
            _write_tensor(buf, name, t)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path):
    """Returns (model in eval mode, metadata dict, optimizer state or None)."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with path.open("rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint")
        (version,) = struct.unpack("<H", _read_exact(fh, 2))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        head = _read_json(fh)
        (n,) = struct.unpack("<I", _read_exact(fh, 4))
        state = dict(_read_tensor(fh) for _ in range(n))
        optim = None
        (has_opt,) = struct.unpack("<B", _read_exact(fh, 1))
        if has_opt:
            meta = _read_json(fh)
            (m,) = struct.unpack("<I", _read_exact(fh, 4))
            optim = {"meta": meta, "tensors": dict(_read_tensor(fh) for _ in range(m))}
    model = AcousticModel(ModelConfig.from_dict(head["config"]))
    missing = set(model.state_dict()) ^ set(state)
    if missing:
        raise CheckpointError(f"{path}: parameter table mismatch: {sorted(missing)[:5]}")
    model.load_state_dict(state)
    model.eval()
    return model, head["metadata"], optim


def restore_optimizer(optimizer: torch.optim.Optimizer, optim: dict) -> None:
    sd = optimizer.state_dict()
    state: dict = {}
    for name, t in optim["tensors"].items():
        idx, key = name.split("/", 1)
        state.setdefault(int(idx), {})[key] = t.reshape(()) if key == "step" else t
    sd["state"] = state
    for group, saved in zip(sd["param_groups"], optim["meta"]["param_groups"]):
        group.update({k: v for k, v in saved.items() if k != "params"})
    optimizer.load_state_dict(sd)


def content_hash(path: str | Path) -> str:
    """Git blob hash: sha1 over ``b"blob <size>\\0" + content``."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
