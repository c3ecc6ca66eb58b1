"""Versioned binary container for named tensors.

Layout (all integers little-endian):

    magic           4 bytes     b"LGPN"
    version         u16         currently 1
    tensor count    u32
    per tensor:
        name length u16
        name        UTF-8 bytes
        rank        u8
        extents     rank * u64
        data        prod(extents) * f32

Values are stored as 32-bit floats; a float32 array round-trips
bit-exactly.  Insertion order of the mapping is preserved.
"""

from __future__ import annotations

import hashlib
import io
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"LGPN"
VERSION = 1

_MAX_RANK = 8


def serialize_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    """Encode a name -> array mapping into container bytes."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", VERSION, len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.ndim > _MAX_RANK:
            raise ValueError(f"tensor {name!r} has rank {arr.ndim} > {_MAX_RANK}")
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name!r}")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        for ext in arr.shape:
            buf.write(struct.pack("<Q", ext))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def deserialize_tensors(data: bytes) -> dict[str, np.ndarray]:
    """Decode container bytes back into an ordered name -> float32 array mapping."""
    view = memoryview(data)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise FormatError(f"truncated container while reading {what}", offset=pos)
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4, "magic")) != MAGIC:
        raise FormatError("bad magic bytes, not a tensor container", offset=0)
    (version,) = struct.unpack("<H", take(2, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}", offset=4)
    (count,) = struct.unpack("<I", take(4, "tensor count"))

    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = bytes(take(name_len, "name")).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        if rank > _MAX_RANK:
            raise FormatError(f"tensor {name!r} has invalid rank {rank}", offset=pos - 1)
        shape = tuple(
            struct.unpack("<Q", take(8, f"extent of {name!r}"))[0] for _ in range(rank)
        )
        n_values = 1
        for ext in shape:
            n_values *= ext
        raw = take(4 * n_values, f"data of {name!r}")
        if name in out:
            raise FormatError(f"duplicate tensor name {name!r}", offset=pos)
        out[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    if pos != len(view):
        raise FormatError("trailing bytes after last tensor", offset=pos)
    return out


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_tensors(tensors))


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return deserialize_tensors(fh.read())


def fingerprint(tensors: dict[str, np.ndarray]) -> bytes:
    """SHA-256 digest of the canonical serialized form (32 bytes).

    A file written by :func:`save_tensors` hashes to the same digest as the
    in-memory mapping it came from, so model checkpoints can reference the
    exact GMM/stats artifacts they were trained with.
    """
    return hashlib.sha256(serialize_tensors(tensors)).digest()


def file_fingerprint(path) -> bytes:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).digest()
