"""Self-describing binary container used by all persisted models.

Layout: 8-byte magic, u16 major/minor version, length-prefixed JSON header,
a count of named arrays (each stored with dtype, shape, and raw little-endian
C-order bytes), and a trailing SHA-256 checksum over everything before it.
Serialization is byte-deterministic for fixed inputs.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from typing import Any

import numpy as np

from rheframe.errors import ModelError

_CHECKSUM_LEN = 32


def _norm_dtype(arr: np.ndarray) -> np.ndarray:
    dt = arr.dtype.newbyteorder("<")
    return np.ascontiguousarray(arr, dtype=dt)


def dump_blob(
    magic: str,
    version: tuple[int, int],
    header: dict[str, Any],
    arrays: dict[str, np.ndarray],
) -> bytes:
    """Serialize header metadata plus named arrays into one byte string."""
    if len(magic) > 8:
        raise ValueError(f"magic too long: {magic!r}")
    buf = io.BytesIO()
    buf.write(magic.encode("ascii").ljust(8, b"\x00"))
    buf.write(struct.pack("<HH", version[0], version[1]))
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf.write(struct.pack("<I", len(header_bytes)))
    buf.write(header_bytes)
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = _norm_dtype(np.asarray(arr))
        name_bytes = name.encode("utf-8")
        dtype_bytes = arr.dtype.str.encode("ascii")
        buf.write(struct.pack("<H", len(name_bytes)))
        buf.write(name_bytes)
        buf.write(struct.pack("<B", len(dtype_bytes)))
        buf.write(dtype_bytes)
        buf.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<Q", dim))
        buf.write(arr.tobytes(order="C"))
    payload = buf.getvalue()
    return payload + hashlib.sha256(payload).digest()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelError("truncated model data")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_blob(
    data: bytes,
    magic: str,
    max_major: int,
) -> tuple[tuple[int, int], dict[str, Any], dict[str, np.ndarray]]:
    """Parse bytes produced by :func:`dump_blob`, verifying checksum and version."""
    if len(data) < 8 + 4 + _CHECKSUM_LEN:
        raise ModelError("truncated model data")
    payload, digest = data[:-_CHECKSUM_LEN], data[-_CHECKSUM_LEN:]
    if hashlib.sha256(payload).digest() != digest:
        raise ModelError("checksum mismatch: model data is corrupt or truncated")
    rd = _Reader(payload)
    got_magic = rd.take(8).rstrip(b"\x00").decode("ascii", errors="replace")
    if got_magic != magic:
        raise ModelError(f"bad magic: expected {magic!r}, found {got_magic!r}")
    major, minor = rd.unpack("<HH")
    if major > max_major:
        raise ModelError(
            f"{magic} version {major}.{minor} is newer than supported major {max_major}"
        )
    (header_len,) = rd.unpack("<I")
    header = json.loads(rd.take(header_len).decode("utf-8"))
    (n_arrays,) = rd.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (name_len,) = rd.unpack("<H")
        name = rd.take(name_len).decode("utf-8")
        (dtype_len,) = rd.unpack("<B")
        dtype = np.dtype(rd.take(dtype_len).decode("ascii"))
        (ndim,) = rd.unpack("<B")
        shape = tuple(rd.unpack("<" + "Q" * ndim)) if ndim else ()
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        raw = rd.take(count * dtype.itemsize)
        arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return (major, minor), header, arrays


def write_blob(path, magic, version, header, arrays) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_blob(magic, version, header, arrays))


def read_blob(path, magic, max_major):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ModelError(f"cannot read model file {path}: {exc}") from exc
    return parse_blob(data, magic, max_major)
