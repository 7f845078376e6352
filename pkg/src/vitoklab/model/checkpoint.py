"""Binary tensor files.

Layout (all integers little-endian uint32)::

    b"VTOK1" | version | header_len | header (UTF-8 JSON)
    | count | count x (name_len | name | ndim | dims...)
    | tensor payloads in name-table order, little-endian float32

Checkpoints put the model config in the header; optimizer sidecars use the
same layout with a different ``kind``.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from ..numerics import Tensor
from .config import ModelConfig
from .vitok import ParamStore

MAGIC = b"VTOK1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def write_tensors(path, header: dict, tensors: dict[str, np.ndarray]) -> None:
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(head)), head, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
    for arr in tensors.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)


def read_tensors(path) -> tuple[dict, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if not buf.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic")
    try:
        off = len(MAGIC)
        version, hlen = struct.unpack_from("<II", buf, off)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        off += 8
        header = json.loads(buf[off : off + hlen].decode("utf-8"))
        off += hlen
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        table = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off : off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<I", buf, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            table.append((name, shape))
        tensors = {}
        for name, shape in table:
            n = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(shape)
            off += 4 * n
            tensors[name] = arr.astype(np.float32)
    except (struct.error, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: truncated or corrupt ({exc})") from None
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")
    return header, tensors


def save_checkpoint(path, cfg: ModelConfig, params: ParamStore, meta: dict | None = None) -> None:
    header = {"kind": "checkpoint", "config": cfg.to_dict(), "meta": meta or {}}
    write_tensors(path, header, {k: t.data for k, t in params.items()})


def load_checkpoint(path) -> tuple[ModelConfig, ParamStore, dict]:
    header, tensors = read_tensors(path)
    if header.get("kind") != "checkpoint":
        raise CheckpointError(f"{path}: not a model checkpoint")
    cfg = ModelConfig.from_dict(header["config"])
    from .vitok import param_shapes

    expected = {name: shape for name, shape, _ in param_shapes(cfg)}
    if set(expected) != set(tensors):
        raise CheckpointError(f"{path}: parameter names do not match config")
    store = ParamStore()
    for name, _, _ in param_shapes(cfg):
        if tuple(tensors[name].shape) != tuple(expected[name]):
            raise CheckpointError(f"{path}: {name} has shape {tensors[name].shape}, expected {expected[name]}")
        store[name] = Tensor(tensors[name], requires_grad=True, name=name)
    return cfg, store, header.get("meta", {})
