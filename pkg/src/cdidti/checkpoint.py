"""Binary checkpoint format.

Little-endian: magic ``CDIC``, ``u32`` format version, then until EOF one
record per tensor: ``u32`` name length, UTF-8 name, ``u32`` rank, ``u32``
dims, ``f32`` data. The model configuration and input dimensions needed to
rebuild the parameter tree live in a JSON sidecar (``<path>.json``).
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .model import EntityDims, InputDims, ModelConfig, ModelParams, init_params
from .params import named_tensors

MAGIC = b"CDIC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def write_tensors(path: Path, tensors: list[tuple[str, np.ndarray]]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", VERSION))
        for name, arr in tensors:
            raw = name.encode("utf-8")
            arr = np.asarray(arr, dtype="<f4")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_tensors(path: Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 8
    out: dict[str, np.ndarray] = {}
    try:
        while pos < len(raw):
            (n,) = struct.unpack_from("<I", raw, pos)
            name = raw[pos + 4 : pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (rank,) = struct.unpack_from("<I", raw, pos)
            dims = struct.unpack_from(f"<{rank}I", raw, pos + 4)
            pos += 4 + 4 * rank
            count = int(np.prod(dims)) if rank else 1
            if pos + 4 * count > len(raw):
                raise CheckpointError(f"{path}: truncated data for tensor {name!r}")
            out[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * count
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint ({exc})") from None
    return out


def save_checkpoint(path: Path, params: ModelParams, cfg: ModelConfig, dims: InputDims, meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_tensors(path, [(name, t.data) for name, t in named_tensors(params)])
    sidecar = {"model": dataclasses.asdict(cfg), "dims": dataclasses.asdict(dims), "meta": meta or {}}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=1), encoding="utf-8")


def load_checkpoint(path: Path) -> tuple[ModelParams, ModelConfig, InputDims, dict]:
    path = Path(path)
    side_path = Path(str(path) + ".json")
    if not side_path.exists():
        raise CheckpointError(f"missing checkpoint sidecar {side_path}")
    side = json.loads(side_path.read_text(encoding="utf-8"))
    cfg = ModelConfig(**side["model"])
    dims = InputDims(EntityDims(**side["dims"]["drug"]), EntityDims(**side["dims"]["target"]))
    params = init_params(cfg, dims)
    stored = read_tensors(path)
    named = dict(named_tensors(params))
    if set(stored) != set(named):
        missing = sorted(set(named) - set(stored))[:3]
        extra = sorted(set(stored) - set(named))[:3]
        raise CheckpointError(f"{path}: tensor names do not match the model (missing {missing}, unexpected {extra})")
    for name, t in named.items():
        if stored[name].shape != t.shape:
            raise CheckpointError(f"{path}: tensor {name!r} has shape {stored[name].shape}, expected {t.shape}")
        t.data = stored[name].astype(t.dtype)
    return params, cfg, dims, side.get("meta", {})
