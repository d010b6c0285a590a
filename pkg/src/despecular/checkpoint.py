"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"DHSR"                      magic
    u32 version
    u32 n, n bytes               canonical config JSON
    u32 tensor count
    per tensor:
        u32 n, n bytes           UTF-8 name
        u8 dtype tag             1 = float64, 2 = float32
        u8 rank
        u32 * rank               dims
        raw little-endian scalars
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .network import Model, ModelConfig, build_model
from .validation import ConfigurationError

MAGIC = b"DHSR"
FORMAT_VERSION = 1
_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<f4")}
_TAGS = {np.dtype("float64"): 1, np.dtype("float32"): 2}


class CheckpointError(ValueError):
    """Malformed, truncated or mismatched checkpoint file."""


def dumps(model: Model) -> bytes:
    config = model.config.to_json().encode("utf-8")
    tensors = model.named_tensors()
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(config)), config, struct.pack("<I", len(tensors))]
    for name, arr in tensors:
        raw_name = name.encode("utf-8")
        tag = _TAGS.get(arr.dtype)
        if tag is None:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", tag, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        end = self.offset + n
        if end > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint: needed {n} bytes for {what} at offset {self.offset}, "
                f"only {len(self.data) - self.offset} left"
            )
        chunk = self.data[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(data: bytes) -> Model:
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r} at offset 0; expected {MAGIC!r}")
    (version,) = r.unpack("<I", "format version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version} (expected {FORMAT_VERSION})")
    (n,) = r.unpack("<I", "config length")
    try:
        config = ModelConfig.from_dict(json.loads(r.take(n, "config").decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"invalid config block: {exc}") from exc
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    dtypes = set()
    for _ in range(count):
        (n,) = r.unpack("<I", "tensor name length")
        name = r.take(n, "tensor name").decode("utf-8")
        tag, rank = r.unpack("<BB", f"dtype/rank of {name}")
        if tag not in _DTYPES:
            raise CheckpointError(f"{name}: unknown dtype tag {tag} at offset {r.offset - 2}")
        dims = r.unpack(f"<{rank}I", f"dims of {name}")
        dtype = _DTYPES[tag]
        size = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        raw = r.take(size, f"data of {name}")
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
        dtypes.add(tensors[name].dtype)
    if r.offset != len(data):
        raise CheckpointError(f"{len(data) - r.offset} trailing bytes after offset {r.offset}")
    dtype = dtypes.pop() if len(dtypes) == 1 else np.float64
    model = build_model(config, rng=None, dtype=dtype)
    try:
        model.load_state_dict(tensors)
    except ConfigurationError as exc:
        raise CheckpointError(str(exc)) from exc
    return model


def save_checkpoint(model: Model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(model))


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        return loads(fh.read())
