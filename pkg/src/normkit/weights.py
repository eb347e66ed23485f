"""Flat binary container for named float64 tensors.

Layout (all integers little-endian):

    magic   6 bytes   b"NRMK1\\n"
    count   uint32    number of entries
    entry   repeated:
        name_len  uint16
        name      name_len bytes, UTF-8, unique within the file
        dims      4 x uint32  (T, C, W, H)
        data      T*C*W*H float64 values

The save -> load round trip is bitwise lossless; entry order is preserved.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError, InvalidArgument
from .tensor import require_tensor4

MAGIC = b"NRMK1\n"


def save_entries(path: str, entries: dict[str, np.ndarray]) -> None:
    """Write named tensors in insertion order."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", len(entries))
    seen = set()
    for name, tensor in entries.items():
        require_tensor4(tensor, f"entry {name!r}")
        if name in seen:
            raise InvalidArgument(f"duplicate entry name {name!r}")
        seen.add(name)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise InvalidArgument(f"entry name too long: {name!r}")
        blob += struct.pack("<H", len(raw))
        blob += raw
        blob += struct.pack("<4I", *tensor.shape)
        blob += np.ascontiguousarray(tensor, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


def load_entries(path: str) -> dict[str, np.ndarray]:
    """Read named tensors back, preserving file order."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"bad magic, expected {MAGIC!r}", offset=0)
    off = len(MAGIC)

    def take(n, what):
        nonlocal off
        if off + n > len(blob):
            raise FormatError(f"truncated while reading {what}", offset=off)
        piece = blob[off : off + n]
        off += n
        return piece

    (count,) = struct.unpack("<I", take(4, "entry count"))
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        if name in entries:
            raise FormatError(f"duplicate entry name {name!r}", offset=off)
        dims = struct.unpack("<4I", take(16, "dims"))
        if any(d < 1 for d in dims):
            raise FormatError(f"entry {name!r} has a zero dimension {dims}", offset=off - 16)
        n = int(np.prod(dims, dtype=np.int64))
        data = take(8 * n, f"payload of {name!r}")
        arr = np.frombuffer(data, dtype="<f8").reshape(dims).astype(np.float64)
        entries[name] = arr
    if off != len(blob):
        raise FormatError("trailing bytes after final entry", offset=off)
    return entries


def scalar_entry(value: float) -> np.ndarray:
    """Encode one scalar as a (1,1,1,1) tensor entry."""
    return np.full((1, 1, 1, 1), float(value))


def entry_scalar(entries: dict[str, np.ndarray], name: str) -> float:
    try:
        return float(entries[name].ravel()[0])
    except KeyError:
        raise FormatError(f"missing required entry {name!r}")
