"""``ZMLM`` parameter files: config JSON followed by named f32 blocks."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CorruptionError, FormatError
from .config import ModelConfig
from .core import MaskedPredictionModel

MAGIC = b"ZMLM"
VERSION = 1


def write_model(model: MaskedPredictionModel, path: str | Path):
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg, struct.pack("<I", len(model.params))]
    for name, value in model.params.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(value, dtype="<f4")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_model(path: str | Path) -> MaskedPredictionModel:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise CorruptionError(f"{path}: truncated at byte {pos}")
        chunk = raw[pos : pos + n]
        pos += n
        return chunk

    version, cfg_len = struct.unpack("<II", take(8))
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    config = ModelConfig.from_dict(json.loads(take(cfg_len).decode("utf-8")))
    (count,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(raw):
        raise CorruptionError(f"{path}: {len(raw) - pos} trailing bytes")
    return MaskedPredictionModel(config, params)
