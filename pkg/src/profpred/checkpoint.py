"""Checkpoint serialization (magic PPCK).

Layout: magic, version, JSON-encoded config, tensor count, then per tensor
its name, rank, dims, and row-major float32 data. Tensors are written in
canonical parameter order so identical params always produce identical
bytes; files round-trip bit-exactly.

The same container backs trainer-state sidecars (magic PPTS), which add
optimizer moments as extra tensors and scalar state in the JSON header.
"""
from __future__ import annotations

import io
import json

import numpy as np

from ._binio import (
    check_magic,
    read_f32_array,
    read_str,
    read_u32,
    write_f32_array,
    write_str,
    write_u32,
)
from .exceptions import MalformedRecordError
from .model import ModelConfig, ModelParams

PPCK_MAGIC = b"PPCK"
PPTS_MAGIC = b"PPTS"
FORMAT_VERSION = 1


def _dump_json(meta: dict) -> str:
    return json.dumps(meta, sort_keys=True, separators=(",", ":"))


def write_tensor_container(magic: bytes, meta: dict,
                           tensors: dict[str, np.ndarray]) -> bytes:
    fh = io.BytesIO()
    fh.write(magic)
    write_u32(fh, FORMAT_VERSION)
    write_str(fh, _dump_json(meta))
    write_u32(fh, len(tensors))
    for name, tensor in tensors.items():
        write_str(fh, name)
        write_u32(fh, tensor.ndim)
        for dim in tensor.shape:
            write_u32(fh, dim)
        write_f32_array(fh, tensor)
    return fh.getvalue()


def read_tensor_container(data, magic: bytes):
    fh = io.BytesIO(data) if isinstance(data, (bytes, bytearray)) else data
    check_magic(fh, magic)
    version = read_u32(fh)
    if version != FORMAT_VERSION:
        raise MalformedRecordError(f"unsupported container version {version}")
    meta = json.loads(read_str(fh))
    count = read_u32(fh)
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = read_str(fh)
        rank = read_u32(fh)
        shape = tuple(read_u32(fh) for _ in range(rank))
        tensors[name] = read_f32_array(fh, shape)
    return meta, tensors


def write_checkpoint(params: ModelParams, extra_meta: dict | None = None) -> bytes:
    """Serialize model parameters (float32) plus their config."""
    meta = {"config": params.config.to_dict()}
    if extra_meta:
        meta.update(extra_meta)
    tensors = {name: np.asarray(t, dtype=np.float32)
               for name, t in params.items()}
    return write_tensor_container(PPCK_MAGIC, meta, tensors)


def read_checkpoint(data) -> tuple[ModelParams, dict]:
    """Parse bytes from write_checkpoint; returns (params, meta)."""
    meta, tensors = read_tensor_container(data, PPCK_MAGIC)
    config = ModelConfig.from_dict(meta["config"])
    params = ModelParams(config, tensors)
    return params, meta


def save_checkpoint(path, params: ModelParams,
                    extra_meta: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(write_checkpoint(params, extra_meta))


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    with open(path, "rb") as fh:
        return read_checkpoint(fh.read())
