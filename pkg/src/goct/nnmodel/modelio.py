"""Model file format.

magic `GOCTMODL`, u32 version, config block (u32 count, then per entry
u16 key length, key, u16 value length, value as text), u32 tensor
count, then per tensor u16 name length, name, u32 rank, u32 dims,
row-major little-endian float32 payload.  Round trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from goct.errors import FormatError
from goct.nnmodel.config import config_from_dict, config_to_dict
from goct.nnmodel.net import ModelParams

MODEL_MAGIC = b"GOCTMODL"
MODEL_VERSION = 1


def save_model(path, params: ModelParams) -> None:
    parts = [MODEL_MAGIC, struct.pack("<I", MODEL_VERSION)]
    config_items = config_to_dict(params.config)
    parts.append(struct.pack("<I", len(config_items)))
    for key, value in config_items.items():
        if isinstance(value, bool):
            text = "true" if value else "false"
        else:
            text = repr(value)
        kb, vb = key.encode(), text.encode()
        parts.append(struct.pack("<H", len(kb)) + kb + struct.pack("<H", len(vb)) + vb)
    parts.append(struct.pack("<I", len(params.tensors)))
    for name, tensor in params.tensors.items():
        arr = np.ascontiguousarray(tensor, dtype="<f4")
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("model file truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_model(path) -> ModelParams:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(len(MODEL_MAGIC)) != MODEL_MAGIC:
        raise FormatError("bad magic; not a model file")
    version = r.u32()
    if version != MODEL_VERSION:
        raise FormatError(f"model file is version {version}; this reader supports version {MODEL_VERSION}")
    raw_config = {}
    for _ in range(r.u32()):
        key = r.take(r.u16()).decode()
        raw_config[key] = r.take(r.u16()).decode()
    config = config_from_dict(raw_config)
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u16()).decode()
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = 1
        for d in dims:
            count *= d
        tensors[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims).copy()
    if r.pos != len(r.data):
        raise FormatError(f"{len(r.data) - r.pos} trailing bytes after last tensor")
    return ModelParams(config=config, tensors=tensors)
