"""Self-describing binary container for named float32 tensors plus JSON metadata.

Layout (all integers u32 little-endian)::

    b"L2I1" | version | tensor count
    per tensor: name length | UTF-8 name | rank | dims... | float32 LE data
    metadata length | UTF-8 JSON
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"L2I1"
FORMAT_VERSION = 1
_U32 = struct.Struct("<I")


class ContainerError(ValueError):
    pass


@dataclass
class Container:
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def with_prefix(self, prefix: str) -> dict[str, np.ndarray]:
        return {k[len(prefix):]: v for k, v in self.tensors.items() if k.startswith(prefix)}


def encode(container: Container) -> bytes:
    parts = [MAGIC, _U32.pack(FORMAT_VERSION), _U32.pack(len(container.tensors))]
    for name, array in container.tensors.items():
        raw = name.encode("utf-8")
        data = np.asarray(array, dtype="<f4")
        parts += [_U32.pack(len(raw)), raw, _U32.pack(data.ndim)]
        parts += [_U32.pack(d) for d in data.shape]
        parts.append(data.tobytes())
    meta = json.dumps(container.metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts += [_U32.pack(len(meta)), meta]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes, source: str):
        self.buf, self.pos, self.source = buf, 0, source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise ContainerError(f"{self.source}: truncated while reading {what}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def decode(buf: bytes, source: str = "<bytes>") -> Container:
    r = _Reader(buf, source)
    if r.take(4, "magic") != MAGIC:
        raise ContainerError(f"{source}: not a checkpoint (bad magic)")
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise ContainerError(f"{source}: unsupported format version {version}")
    count = r.u32("tensor count")
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        name = r.take(r.u32("name length"), "tensor name").decode("utf-8")
        if name in tensors:
            raise ContainerError(f"{source}: duplicate tensor name {name!r}")
        rank = r.u32("rank")
        dims = tuple(r.u32("dimension") for _ in range(rank))
        n_bytes = 4 * int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(n_bytes, f"data of {name!r}"), dtype="<f4").reshape(dims).copy()
    meta_raw = r.take(r.u32("metadata length"), "metadata")
    if r.pos != len(buf):
        raise ContainerError(f"{source}: {len(buf) - r.pos} unexpected trailing bytes")
    try:
        metadata = json.loads(meta_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{source}: metadata is not valid JSON ({exc})") from exc
    return Container(tensors, metadata)


def save_container(path: str | os.PathLike, container: Container) -> None:
    Path(path).write_bytes(encode(container))


def load_container(path: str | os.PathLike) -> Container:
    path = Path(path)
    if not path.is_file():
        raise ContainerError(f"{path}: no such file")
    return decode(path.read_bytes(), str(path))
