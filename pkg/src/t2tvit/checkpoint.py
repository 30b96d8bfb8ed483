"""Binary checkpoint files.

Layout (all integers little-endian u32 unless noted)::

    b"T2TV"                    magic
    version                    currently 1
    header length, header      UTF-8 JSON: {"config": <canonical model config>, "meta": {...}}
    parameter count
    per parameter:
        name length, name      UTF-8
        dtype tag (u8)         0 = float32, 1 = float64
        ndim, shape[ndim]
        raw values             C order, little-endian

The header JSON is written with sorted keys and no whitespace, so saving the
same model twice yields identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .model import ModelConfig, T2TViT, build

MAGIC = b"T2TV"
VERSION = 1
DTYPE_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}
TAG_DTYPES = {v: k for k, v in DTYPE_TAGS.items()}


class CheckpointError(ValueError):
    pass


def _u32(f: BinaryIO, value: int) -> None:
    f.write(struct.pack("<I", value))


def _read(f: BinaryIO, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint: wanted {n} bytes, got {len(data)}")
    return data


def _read_u32(f: BinaryIO) -> int:
    return struct.unpack("<I", _read(f, 4))[0]


def save(path: str | Path, model: T2TViT, meta: dict | None = None) -> None:
    header = json.dumps(
        {"config": json.loads(model.cfg.to_json()), "meta": meta or {}},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    params = list(model.named_parameters())
    with open(path, "wb") as f:
        f.write(MAGIC)
        _u32(f, VERSION)
        _u32(f, len(header))
        f.write(header)
        _u32(f, len(params))
        for name, p in params:
            if p.dtype not in DTYPE_TAGS:
                raise CheckpointError(f"{name}: unsupported dtype {p.dtype}")
            raw = name.encode()
            _u32(f, len(raw))
            f.write(raw)
            f.write(struct.pack("<B", DTYPE_TAGS[p.dtype]))
            _u32(f, p.data.ndim)
            for extent in p.data.shape:
                _u32(f, extent)
            f.write(np.ascontiguousarray(p.data, dtype=p.dtype.newbyteorder("<")).tobytes())


def read(path: str | Path) -> tuple[ModelConfig, dict, dict[str, np.ndarray]]:
    """Parse a checkpoint into ``(config, meta, state)`` without building a model."""
    with open(path, "rb") as f:
        if _read(f, 4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        version = _read_u32(f)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        header = json.loads(_read(f, _read_u32(f)).decode())
        state = {}
        for _ in range(_read_u32(f)):
            name = _read(f, _read_u32(f)).decode()
            tag = _read(f, 1)[0]
            if tag not in TAG_DTYPES:
                raise CheckpointError(f"{name}: unknown dtype tag {tag}")
            dtype = TAG_DTYPES[tag]
            shape = tuple(_read_u32(f) for _ in range(_read_u32(f)))
            count = int(np.prod(shape, dtype=np.int64))
            raw = _read(f, count * dtype.itemsize)
            state[name] = np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes after parameter table")
    return ModelConfig.from_dict(header["config"]), header.get("meta", {}), state


def load(path: str | Path) -> tuple[T2TViT, dict]:
    cfg, meta, state = read(path)
    model = build(cfg, seed=int(meta.get("seed", 0)), materialize=False)
    model.load_state_dict(state)
    return model, meta
