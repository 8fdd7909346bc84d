"""Versioned little-endian container for named float64 arrays.

Layout::

    b"GTD1"              magic
    u32                  version
    u32                  array count
    per array:
        u16 name length, name (utf-8)
        u8 dtype code (0 = float64), u8 ndim, u32 dims[ndim]
        payload, little-endian, C order
    u32 blob length, blob (utf-8 text; JSON by convention)

Checkpoints, dataset features and gate dumps all use this format.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from gtd.errors import FormatError

MAGIC = b"GTD1"
VERSION = 1
_DTYPES = {0: np.dtype("<f8")}
_CODES = {np.dtype("<f8"): 0}


def dumps(arrays: Mapping[str, np.ndarray], blob: str = "") -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(arrays)))
    for name, arr in arrays.items():
        a = np.asarray(arr)
        if a.dtype.kind != "f" or a.dtype.itemsize != 8:
            raise FormatError(f"array {name!r}: only float64 is supported, got {a.dtype}")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or a.ndim > 0xFF:
            raise FormatError(f"array {name!r}: name or rank too large")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", 0, a.ndim))
        buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    text = blob.encode("utf-8")
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("truncated container")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes) -> tuple[dict[str, np.ndarray], str]:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise FormatError("bad magic: not a GTD1 container")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"unsupported container version {version} (expected {VERSION})")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        code, ndim = r.unpack("<BB")
        if code not in _DTYPES:
            raise FormatError(f"array {name!r}: unknown dtype code {code}")
        dims = r.unpack(f"<{ndim}I") if ndim else ()
        dtype = _DTYPES[code]
        size = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        arr = np.frombuffer(r.take(size), dtype=dtype).reshape(dims).astype(np.float64)
        if name in arrays:
            raise FormatError(f"duplicate array name {name!r}")
        arrays[name] = arr
    (blob_len,) = r.unpack("<I")
    blob = r.take(blob_len).decode("utf-8")
    if r.pos != len(data):
        raise FormatError("trailing bytes after container blob")
    return arrays, blob


def save(path: str | Path, arrays: Mapping[str, np.ndarray], blob: str = "") -> None:
    Path(path).write_bytes(dumps(arrays, blob))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], str]:
    return loads(Path(path).read_bytes())
