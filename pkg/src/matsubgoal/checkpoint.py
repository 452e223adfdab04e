"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"MATCKPT\\0"           8-byte magic
    u32 version
    u64 header length
    header                 UTF-8 JSON: {"metadata": {...}, "params": [{"name", "shape"}, ...]}
    payload                each parameter's values as float64 '<f8', row-major, in header order

Values round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = b"MATCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, params: Mapping[str, np.ndarray], metadata: Mapping[str, Any] | None = None) -> None:
    names = list(params)
    if len(set(names)) != len(names):
        raise CheckpointError("duplicate parameter names")
    header = {
        "metadata": dict(metadata or {}),
        "params": [{"name": n, "shape": list(np.shape(params[n]))} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params[n], dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Return ``(name -> array, metadata)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(raw[start : start + hlen].decode("utf-8"))
    offset = start + hlen
    params: dict[str, np.ndarray] = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated payload at {entry['name']}")
        params[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return params, header["metadata"]


def save_model(path: str | Path, model, metadata: Mapping[str, Any] | None = None) -> None:
    """Write a model's parameters with its config under ``metadata["model"]``."""
    save_checkpoint(path, model.state_dict(), {**(metadata or {}), "model": model.config.to_dict()})


def load_model(path: str | Path):
    """Rebuild a ``SubgoalModel`` from ``save_model`` output; returns ``(model, metadata)``."""
    from .model import ModelConfig, SubgoalModel

    if not Path(path).exists():
        raise FileNotFoundError(f"missing checkpoint {path}")
    params, meta = load_checkpoint(path)
    if "model" not in meta:
        raise CheckpointError(f"{path}: no model config in metadata")
    model = SubgoalModel(ModelConfig(**meta["model"]))
    model.load_state_dict(params)
    return model, meta
