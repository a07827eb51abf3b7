"""Versioned binary container used by graph snapshots and model files.

Layout: magic bytes, u32 format version, u64 header length, a UTF-8 JSON
header, the raw bytes of each array listed in ``header["arrays"]`` (C
order, explicit little-endian dtypes), and a trailing CRC32 over all
preceding bytes. All integers are little-endian.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np


class ContainerError(ValueError):
    """Base class for malformed container files."""


class BadMagicError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


class TruncatedFileError(ContainerError):
    pass


class ChecksumError(ContainerError):
    pass


_ALLOWED_DTYPES = {"<f8", "<i8", "<u8", "|u1"}


def _canonical_dtype(arr: np.ndarray) -> str:
    if arr.dtype == np.float64:
        return "<f8"
    if arr.dtype == np.int64:
        return "<i8"
    if arr.dtype == np.uint64:
        return "<u8"
    if arr.dtype == np.uint8:
        return "|u1"
    raise ValueError(f"unsupported array dtype {arr.dtype}")


def pack_container(magic: bytes, version: int, header: dict, arrays: dict[str, np.ndarray]) -> bytes:
    """Serialize header + named arrays into a single checksummed blob."""
    descs = []
    blobs = []
    for name, arr in arrays.items():
        dt = _canonical_dtype(arr)
        descs.append({"name": name, "dtype": dt, "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(arr).astype(dt, copy=False).tobytes())
    full_header = dict(header)
    full_header["arrays"] = descs
    header_bytes = json.dumps(full_header, sort_keys=True).encode("utf-8")
    parts = [magic, struct.pack("<I", version), struct.pack("<Q", len(header_bytes)), header_bytes]
    parts.extend(blobs)
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def unpack_container(data: bytes, magic: bytes, version: int) -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < len(magic) + 4 + 8 + 4:
        raise TruncatedFileError("file too short for container header")
    if data[: len(magic)] != magic:
        raise BadMagicError(f"bad magic: expected {magic!r}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("CRC32 mismatch")
    off = len(magic)
    (got_version,) = struct.unpack_from("<I", body, off)
    off += 4
    if got_version != version:
        raise VersionMismatchError(f"format version {got_version}, expected {version}")
    (hlen,) = struct.unpack_from("<Q", body, off)
    off += 8
    if off + hlen > len(body):
        raise TruncatedFileError("truncated header")
    header = json.loads(body[off : off + hlen].decode("utf-8"))
    off += hlen
    arrays: dict[str, np.ndarray] = {}
    for desc in header.pop("arrays", []):
        dt = desc["dtype"]
        if dt not in _ALLOWED_DTYPES:
            raise ContainerError(f"unsupported dtype {dt!r}")
        shape = tuple(int(x) for x in desc["shape"])
        count = 1
        for x in shape:
            count *= x
        nbytes = int(np.dtype(dt).itemsize) * count
        if off + nbytes > len(body):
            raise TruncatedFileError(f"truncated array {desc['name']!r}")
        arr = np.frombuffer(body[off : off + nbytes], dtype=dt).reshape(shape).copy()
        arrays[desc["name"]] = arr
        off += nbytes
    if off != len(body):
        raise ContainerError("trailing bytes after arrays")
    return header, arrays


def write_container(path, magic: bytes, version: int, header: dict, arrays: dict[str, np.ndarray]) -> int:
    blob = pack_container(magic, version, header, arrays)
    Path(path).write_bytes(blob)
    return len(blob)


def read_container(path, magic: bytes, version: int) -> tuple[dict, dict[str, np.ndarray]]:
    return unpack_container(Path(path).read_bytes(), magic, version)
