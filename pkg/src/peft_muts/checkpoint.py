"""PMTS binary tensor container.

Layout (all integers little-endian)::

    b"PMTS" | u32 version=1 | u32 count
    per tensor: u16 name_len | name (utf-8) | u8 dtype (0=f32, 1=f64)
                | u8 ndim | ndim x u32 dims | raw little-endian payload

Tensors are written in the order given, so a fixed insertion order gives
byte-identical files.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import BadMagicError, CheckpointError, ShapeMismatchError, TruncatedFileError, VersionMismatchError

MAGIC = b"PMTS"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def encode(tensors):
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            arr = arr.astype(np.float64)
        code = _CODES[arr.dtype]
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:40]}...")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


def decode(buf):
    view = memoryview(buf)
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(view):
            raise TruncatedFileError(f"file ends inside {what} (need {n} bytes at offset {pos})")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4, "magic")) != MAGIC:
        raise BadMagicError("not a PMTS file (bad magic)")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise VersionMismatchError(f"unsupported PMTS version {version}, expected {VERSION}")
    out = {}
    for i in range(count):
        (nlen,) = struct.unpack("<H", take(2, f"tensor {i} name length"))
        name = bytes(take(nlen, f"tensor {i} name")).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2, f"tensor {name!r} header"))
        if code not in _DTYPES:
            raise CheckpointError(f"tensor {name!r}: unknown dtype code {code}")
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim, f"tensor {name!r} dims"))
        dt = _DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        payload = take(nbytes, f"tensor {name!r} payload")
        out[name] = np.frombuffer(payload, dtype=dt).reshape(dims).astype(dt.newbyteorder("="), copy=True)
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after {count} tensors")
    return out


def save(path, tensors):
    Path(path).write_bytes(encode(tensors))


def load(path):
    return decode(Path(path).read_bytes())


def check_shapes(found, expected):
    """Raise :class:`ShapeMismatchError` unless names and shapes agree exactly."""
    for name, shape in expected.items():
        if name not in found:
            raise ShapeMismatchError(name, shape, None)
        if tuple(found[name].shape) != tuple(shape):
            raise ShapeMismatchError(name, shape, found[name].shape)
    for name in found:
        if name not in expected:
            raise ShapeMismatchError(name, None, found[name].shape)
