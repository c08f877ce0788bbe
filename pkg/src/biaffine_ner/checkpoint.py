"""Binary model checkpoints.

Layout (little-endian):

    b"BNER" | u32 version | u32 n | n bytes of UTF-8 JSON (config + vocabularies)
    u32 count, then per parameter in declaration order:
        u32 name length | name | u32 ndim | ndim * u32 shape | float64 data
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .model import BiaffineNER

MAGIC = b"BNER"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(model: BiaffineNER) -> bytes:
    meta = {
        "config": model.config.to_dict(),
        "categories": model.categories,
        "char_index": model.char_index,
        "word_index": model.word_index,
    }
    blob = json.dumps(meta, sort_keys=True, ensure_ascii=False).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob, struct.pack("<I", len(model.params))]
    for name, value in model.params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{value.ndim}I", value.ndim, *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    return b"".join(parts)


def loads(raw: bytes, where: str = "checkpoint") -> BiaffineNER:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"{where}: truncated at byte {pos}")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    def u32() -> int:
        return struct.unpack("<I", take(4))[0]

    if take(4) != MAGIC:
        raise CheckpointError(f"{where}: not a BNER checkpoint")
    version = u32()
    if version != VERSION:
        raise CheckpointError(f"{where}: unsupported format version {version}")
    try:
        meta = json.loads(take(u32()).decode("utf-8"))
        config = TrainConfig.from_dict(meta["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{where}: bad metadata ({exc})") from None
    params: dict[str, np.ndarray] = {}
    for _ in range(u32()):
        name = take(u32()).decode("utf-8")
        shape = tuple(u32() for _ in range(u32()))
        count = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
    if pos != len(raw):
        raise CheckpointError(f"{where}: {len(raw) - pos} trailing bytes")
    return BiaffineNER(config, meta["categories"], meta["char_index"], meta["word_index"], params)


def save(model: BiaffineNER, path: str | Path) -> None:
    Path(path).write_bytes(dumps(model))


def load(path: str | Path) -> BiaffineNER:
    return loads(Path(path).read_bytes(), where=str(path))
