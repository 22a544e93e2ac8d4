"""Binary tensor container, magic "ULWK".

Layout (all integers little-endian):

    4 bytes   magic b"ULWK"
    u32       format version (currently 1)
    u32       config length, then that many bytes of UTF-8 (JSON)
    u32       entry count
    per entry:
        u16       name length, then the UTF-8 name
        u8        rank
        u32[rank] dims
        f32[prod(dims)] payload, row-major

Entries are written in sorted name order, so saving the same store twice
produces identical bytes.  Loading parses the whole file before returning;
a truncated or malformed file raises CheckpointError with the byte offset
and leaves no partial store behind.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from ulw.autodiff import Tensor
from ulw.errors import CheckpointError
from ulw.params import ParamStore

MAGIC = b"ULWK"
VERSION = 1


def save_checkpoint(path, store: ParamStore, config: dict) -> None:
    """Write atomically (tmp file + rename); payloads are float32."""
    path = Path(path)
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    config_bytes = json.dumps(config, sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(config_bytes))
    blob += config_bytes
    blob += struct.pack("<I", len(store))
    for name, tensor in store.items():
        name_bytes = name.encode("utf-8")
        if len(name_bytes) > 0xFFFF:
            raise CheckpointError(f"parameter name too long: {name!r}")
        arr = np.ascontiguousarray(tensor.data, dtype="<f4")
        blob += struct.pack("<H", len(name_bytes))
        blob += name_bytes
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, count: int, what: str) -> bytes:
        if self.offset + count > len(self.data):
            raise CheckpointError(f"truncated file while reading {what}", offset=self.offset)
        chunk = self.data[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    """Parse a container back into (store, config).  Tensors load as trainable."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc.strerror or exc}") from exc
    reader = _Reader(data)
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    version = reader.u32("version")
    if version != VERSION:
        raise CheckpointError(
            f"unsupported container version {version} (this build reads version {VERSION})",
            offset=4)
    config_len = reader.u32("config length")
    config_offset = reader.offset
    config_bytes = reader.take(config_len, "config block")
    try:
        config = json.loads(config_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"config block is not valid JSON: {exc}", offset=config_offset)
    count = reader.u32("entry count")
    store = ParamStore()
    for i in range(count):
        name_len = reader.u16(f"entry {i} name length")
        name_offset = reader.offset
        try:
            name = reader.take(name_len, f"entry {i} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"entry {i} name is not UTF-8: {exc}", offset=name_offset)
        rank = reader.u8(f"entry {name!r} rank")
        dims = tuple(reader.u32(f"entry {name!r} dim {d}") for d in range(rank))
        size = 1
        for d in dims:
            size *= d
        payload = reader.take(4 * size, f"entry {name!r} payload")
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        if name in store:
            raise CheckpointError(f"duplicate entry name {name!r}", offset=name_offset)
        store.add(name, Tensor(arr, requires_grad=True))
    if reader.offset != len(data):
        raise CheckpointError(
            f"{len(data) - reader.offset} trailing bytes after last entry", offset=reader.offset)
    return store, config
