"""Deterministic checkpoint and report persistence.

Checkpoints are a flat container: magic, a length-prefixed JSON header
(sorted keys) describing metadata plus array layout, then the raw
C-order little-endian array bytes. Nothing in the format depends on
wall-clock time, dict iteration order, or archive metadata, so a
byte-for-byte comparison of two runs is meaningful. Writes go through
a temp file and an atomic rename.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np
import torch

MAGIC = b"BDCKPT01"
_ALLOWED_DTYPES = {"float32", "float64", "int32", "int64", "uint8", "bool"}


class CheckpointError(ValueError):
    pass


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> Path:
    """Write arrays + JSON-serializable metadata atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = sorted(arrays)
    layout = []
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype.name not in _ALLOWED_DTYPES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for array {name!r}")
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        blob = arr.tobytes()
        layout.append(
            {"name": name, "dtype": arr.dtype.name, "shape": list(arr.shape), "nbytes": len(blob)}
        )
        blobs.append(blob)
    header = _canonical_json({"meta": meta, "arrays": layout}).encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(len(header).to_bytes(8, "little"))
            fh.write(header)
            for blob in blobs:
                fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"not a checkpoint file (bad magic): {path}")
        header_len = int.from_bytes(fh.read(8), "little")
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header in {path}: {exc}") from exc
        arrays = {}
        for spec in header["arrays"]:
            blob = fh.read(spec["nbytes"])
            if len(blob) != spec["nbytes"]:
                raise CheckpointError(f"truncated checkpoint: {path}")
            arr = np.frombuffer(blob, dtype=np.dtype(spec["dtype"]))
            arrays[spec["name"]] = arr.reshape(spec["shape"]).copy()
        if fh.read(1):
            raise CheckpointError(f"trailing bytes in checkpoint: {path}")
    return arrays, header["meta"]


def state_dict_to_arrays(state: dict) -> dict[str, np.ndarray]:
    return {key: tensor.detach().cpu().numpy() for key, tensor in state.items()}


def arrays_to_state_dict(arrays: dict[str, np.ndarray]) -> dict:
    return {key: torch.from_numpy(np.ascontiguousarray(arr)) for key, arr in arrays.items()}


def save_json(path, payload: dict) -> Path:
    """Deterministic JSON artifact (sorted keys, newline-terminated)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
