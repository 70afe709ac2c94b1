"""Binary checkpoints: model config plus named float64 parameter arrays.

Layout (little-endian)::

    magic "ANCK" | version u32 | config: u32 length + canonical JSON
    | n_params u32 | per parameter: name (u16 length + UTF-8), rank u8,
      dims u32 * rank, values f64 (row-major)

Parameters are written in sorted name order so equal models give equal bytes.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .corpus import BadMagicError, CorpusFormatError, TruncatedPayloadError, VersionMismatchError
from .model import ModelConfig, Params, param_shapes, params_from_arrays

MAGIC = b"ANCK"
VERSION = 1


class ParameterMismatchError(CorpusFormatError):
    """Stored parameters do not match the shapes implied by the stored config."""


def checkpoint_to_bytes(cfg: ModelConfig, params: Mapping) -> bytes:
    # accepts Tensors or bare arrays
    arrays = {k: getattr(v, "data", v) for k, v in params.items()}
    text = cfg.to_text().encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(text)), text]
    parts.append(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Cursor:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedPayloadError(f"checkpoint truncated at byte {self.pos}")
        out = self.buf[self.pos : self.pos + n].tobytes()
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def checkpoint_from_bytes(buf: bytes) -> tuple[ModelConfig, Params]:
    cur = _Cursor(buf)
    if cur.take(4) != MAGIC:
        raise BadMagicError("not a checkpoint file")
    (version,) = cur.unpack("<I")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    (n_text,) = cur.unpack("<I")
    cfg = ModelConfig.from_text(cur.take(n_text).decode("utf-8"))
    (count,) = cur.unpack("<I")
    arrays = {}
    for _ in range(count):
        (n_name,) = cur.unpack("<H")
        name = cur.take(n_name).decode("utf-8")
        (rank,) = cur.unpack("<B")
        shape = cur.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(cur.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if cur.pos != len(buf):
        raise TruncatedPayloadError(f"{len(buf) - cur.pos} trailing bytes after checkpoint")
    expected = param_shapes(cfg)
    got = {k: v.shape for k, v in arrays.items()}
    if got != expected:
        bad = sorted(set(got) ^ set(expected)) or sorted(k for k in got if got[k] != expected[k])
        raise ParameterMismatchError(f"parameters do not match the model config: {bad[:5]}")
    return cfg, params_from_arrays(arrays)


def save_checkpoint(path, cfg: ModelConfig, params: Mapping) -> None:
    Path(path).write_bytes(checkpoint_to_bytes(cfg, params))


def load_checkpoint(path) -> tuple[ModelConfig, Params]:
    return checkpoint_from_bytes(Path(path).read_bytes())
