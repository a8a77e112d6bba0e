"""Raw tensor files (``.rtn``).

Layout of one record::

    b"RTEN"  version:u8=1  dtype:u8=0 (f32)  ndim:u8  dims:ndim x u32le  payload:f32le

A file may hold several records back to back; model checkpoints use this to
store one record per parameter.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RTEN"
VERSION = 1
DTYPE_F32 = 0


class RtnFormatError(ValueError):
    pass


def encode(tensor) -> bytes:
    arr = np.asarray(tensor)
    if arr.dtype != np.float32:
        arr = arr.astype(np.float32)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim > 255:
        raise RtnFormatError("too many dimensions")
    header = MAGIC + struct.pack("<BBB", VERSION, DTYPE_F32, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.astype("<f4", copy=False).tobytes(order="C")


def _read_record(buf: io.BufferedIOBase):
    magic = buf.read(4)
    if not magic:
        return None
    if magic != MAGIC:
        raise RtnFormatError(f"bad magic {magic!r}")
    head = buf.read(3)
    if len(head) != 3:
        raise RtnFormatError("truncated header")
    version, dtype, ndim = struct.unpack("<BBB", head)
    if version != VERSION:
        raise RtnFormatError(f"unsupported version {version}")
    if dtype != DTYPE_F32:
        raise RtnFormatError(f"unsupported dtype code {dtype}")
    raw = buf.read(4 * ndim)
    if len(raw) != 4 * ndim:
        raise RtnFormatError("truncated dims")
    dims = struct.unpack(f"<{ndim}I", raw)
    if any(d == 0 for d in dims):
        raise RtnFormatError(f"zero-sized dimension in {dims}")
    count = int(np.prod(dims))
    payload = buf.read(4 * count)
    if len(payload) != 4 * count:
        raise RtnFormatError("truncated payload")
    return np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)


def decode_all(data: bytes) -> list[np.ndarray]:
    buf = io.BytesIO(data)
    out = []
    while (rec := _read_record(buf)) is not None:
        out.append(rec)
    return out


def decode(data: bytes) -> np.ndarray:
    records = decode_all(data)
    if len(records) != 1:
        raise RtnFormatError(f"expected one record, found {len(records)}")
    return records[0]


def save(path, tensor) -> None:
    Path(path).write_bytes(encode(tensor))


def load(path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def save_many(path, tensors) -> None:
    Path(path).write_bytes(b"".join(encode(t) for t in tensors))


def load_many(path) -> list[np.ndarray]:
    return decode_all(Path(path).read_bytes())
