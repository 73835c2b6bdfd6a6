"""Versioned binary container for model checkpoints.

Layout (all integers little-endian)::

    magic      4 bytes   b"SWPC"
    version    u16
    tag_len    u16, tag (ascii)       e.g. "network", "gbdt", "knn"
    hdr_len    u32, header (utf-8 JSON, sorted keys)
    arrays     raw little-endian data, in the order listed by the header
    sha256     32 bytes over everything above

The header lists each array as ``[name, dtype, shape]``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SWPC"
FORMAT_VERSION = 1
_DTYPES = {"f8": "<f8", "i8": "<i8", "u1": "|u1"}


class CheckpointError(ValueError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


def _code(a: np.ndarray) -> str:
    if a.dtype.kind == "f":
        return "f8"
    if a.dtype.kind in "iu" and a.dtype != np.uint8:
        return "i8"
    if a.dtype.kind == "b" or a.dtype == np.uint8:
        return "u1"
    raise CheckpointError(f"unsupported array dtype {a.dtype}")


def dumps(tag: str, header: dict, arrays: dict[str, np.ndarray]) -> bytes:
    names = list(arrays)
    listing = []
    payload = []
    for name in names:
        a = np.asarray(arrays[name])
        code = _code(a)
        listing.append([name, code, list(a.shape)])
        payload.append(np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes())
    full = dict(header)
    full["arrays"] = listing
    hdr = json.dumps(full, sort_keys=True, separators=(",", ":")).encode()
    tag_b = tag.encode("ascii")
    body = b"".join([
        MAGIC, struct.pack("<HH", FORMAT_VERSION, len(tag_b)), tag_b,
        struct.pack("<I", len(hdr)), hdr, *payload,
    ])
    return body + hashlib.sha256(body).digest()


def loads(blob: bytes, expect_tag: str | None = None):
    """Return ``(tag, header, arrays)``; raises on any corruption."""
    if len(blob) < 4 + 4 + 4 + 32:
        raise ChecksumError("checkpoint truncated")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checkpoint checksum mismatch (truncated or corrupted file)")
    if body[:4] != MAGIC:
        raise CheckpointError("not a swapcon checkpoint")
    version, tag_len = struct.unpack_from("<HH", body, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    off = 8
    tag = body[off:off + tag_len].decode("ascii")
    off += tag_len
    if expect_tag is not None and tag != expect_tag:
        raise CheckpointError(f"checkpoint holds a {tag!r}, expected {expect_tag!r}")
    (hdr_len,) = struct.unpack_from("<I", body, off)
    off += 4
    header = json.loads(body[off:off + hdr_len].decode())
    off += hdr_len
    arrays = {}
    for name, code, shape in header.pop("arrays"):
        dt = np.dtype(_DTYPES[code])
        n = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        a = np.frombuffer(body, dtype=dt, count=n // dt.itemsize, offset=off).reshape(shape)
        arrays[name] = a.astype(dt.newbyteorder("="), copy=True)
        off += n
    if off != len(body):
        raise CheckpointError("trailing bytes after array payload")
    return tag, header, arrays


def save(path, tag: str, header: dict, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(tag, header, arrays))


def load(path, expect_tag: str | None = None):
    return loads(Path(path).read_bytes(), expect_tag)
