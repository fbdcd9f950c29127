"""Binary tensor files (F2FT) and named-tensor containers (F2FC).

F2FT layout, little-endian::

    b"F2FT" | version u8 = 1 | dtype u8 | rank u8 | rank x u64 dims | payload

dtype 1 is float64, dtype 2 is complex128 stored as interleaved (re, im)
float64 pairs. F2FC layout::

    b"F2FC" | version u8 = 1 | count u32 | count x (name_len u16, utf-8 name, F2FT blob)
"""

from __future__ import annotations

import io
import struct
from collections import OrderedDict
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

from freqadapt.errors import FormatError

TENSOR_MAGIC = b"F2FT"
CONTAINER_MAGIC = b"F2FC"
VERSION = 1
DTYPE_REAL = 1
DTYPE_COMPLEX = 2

_DTYPES = {
    DTYPE_REAL: np.dtype("<f8"),
    DTYPE_COMPLEX: np.dtype("<c16"),
}


def _read_exact(fh: BinaryIO, n: int, what: str, path=None) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}", code="truncated", path=path)
    return buf


def encode_tensor(array) -> bytes:
    array = np.asarray(array)
    if np.iscomplexobj(array):
        dtype_code, data = DTYPE_COMPLEX, array.astype("<c16")
    else:
        dtype_code, data = DTYPE_REAL, array.astype("<f8")
    if data.ndim > 255:
        raise FormatError("rank above 255 is not representable", code="bad_rank")
    header = TENSOR_MAGIC + struct.pack("<BBB", VERSION, dtype_code, data.ndim)
    header += struct.pack(f"<{data.ndim}Q", *data.shape)
    return header + np.ascontiguousarray(data).tobytes(order="C")


def _read_tensor(fh: BinaryIO, path=None) -> np.ndarray:
    magic = _read_exact(fh, 4, "magic", path)
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}", code="bad_magic", path=path)
    version, dtype_code, rank = struct.unpack("<BBB", _read_exact(fh, 3, "header", path))
    if version != VERSION:
        raise FormatError(f"unsupported tensor version {version}", code="bad_version", path=path)
    if dtype_code not in _DTYPES:
        raise FormatError(f"unknown tensor dtype code {dtype_code}", code="bad_dtype", path=path)
    dims = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank, "dims", path))
    dtype = _DTYPES[dtype_code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = _read_exact(fh, count * dtype.itemsize, "payload", path)
    array = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return array.astype(np.complex128 if dtype_code == DTYPE_COMPLEX else np.float64)


def decode_tensor(blob: bytes) -> np.ndarray:
    fh = io.BytesIO(blob)
    array = _read_tensor(fh)
    if fh.read(1):
        raise FormatError("trailing bytes after tensor payload", code="trailing")
    return array


def save_tensor(path, array) -> None:
    Path(path).write_bytes(encode_tensor(array))


def load_tensor(path) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}", code="io", path=str(path)) from exc
    try:
        return decode_tensor(blob)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}", code=exc.code, path=str(path)) from None


def encode_container(entries: Mapping[str, np.ndarray]) -> bytes:
    out = [CONTAINER_MAGIC, struct.pack("<BI", VERSION, len(entries))]
    for name, array in entries.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"entry name too long: {name[:40]}...", code="bad_name")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(encode_tensor(array))
    return b"".join(out)


def decode_container(blob: bytes, path=None) -> "OrderedDict[str, np.ndarray]":
    fh = io.BytesIO(blob)
    magic = _read_exact(fh, 4, "magic", path)
    if magic != CONTAINER_MAGIC:
        raise FormatError(f"bad container magic {magic!r}", code="bad_magic", path=path)
    version, count = struct.unpack("<BI", _read_exact(fh, 5, "header", path))
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}", code="bad_version", path=path)
    entries: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length", path))
        name = _read_exact(fh, name_len, "name", path).decode("utf-8")
        entries[name] = _read_tensor(fh, path)
    if fh.read(1):
        raise FormatError("trailing bytes after last entry", code="trailing", path=path)
    return entries


def save_container(path, entries: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_container(entries))


def load_container(path) -> "OrderedDict[str, np.ndarray]":
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}", code="io", path=str(path)) from exc
    try:
        return decode_container(blob, path=str(path))
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}", code=exc.code, path=str(path)) from None


def bytes_to_tensor(raw: bytes) -> np.ndarray:
    """Pack arbitrary bytes (e.g. UTF-8 JSON) as a float64 vector, one byte per element."""
    return np.frombuffer(raw, dtype=np.uint8).astype(np.float64)


def tensor_to_bytes(array: np.ndarray) -> bytes:
    values = np.asarray(array)
    if values.ndim != 1 or np.any((values < 0) | (values > 255) | (values != np.round(values))):
        raise FormatError("tensor does not hold a byte string", code="bad_meta")
    return values.astype(np.uint8).tobytes()
