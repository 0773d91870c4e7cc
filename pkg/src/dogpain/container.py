"""Versioned binary tensor container shared by checkpoints, clip sets and saliency maps.

Layout::

    b"DPTC"            magic
    uint32 LE          format version
    uint64 LE          header length in bytes
    uint32 LE          CRC-32 of the header bytes
    header             UTF-8 JSON: kind, metadata, tensor directory, data CRC-32
    data               little-endian float32, tensors back to back

Every directory entry carries a name, a shape and a byte offset into the
data block. Loading checks each of those before touching the payload.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Mapping

import numpy as np

from dogpain.errors import (
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    LoadError,
)

MAGIC = b"DPTC"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sIQI")
_DATA = np.dtype("<f4")


def save_tensors(path, tensors: Mapping[str, np.ndarray], kind: str = "tensors", meta: dict | None = None) -> None:
    """Write named arrays (stored as float32) plus JSON metadata."""
    directory, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        raw = np.ascontiguousarray(np.asarray(arr), dtype=_DATA).tobytes()
        directory.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    data = b"".join(blobs)
    header = json.dumps(
        {"kind": kind, "meta": meta or {}, "tensors": directory, "data_bytes": len(data), "crc32": zlib.crc32(data)},
        sort_keys=True,
    ).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header), zlib.crc32(header)) + header + data)
    tmp.replace(path)


def load_tensors(path, kind: str | None = None) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container; returns ``(tensors, meta)``. Every defect maps to a typed error."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise LoadError(f"{path}: {exc.strerror or exc}") from exc
    if len(blob) < _PREFIX.size:
        raise CheckpointTruncatedError(f"{path}: file ends inside the fixed prefix ({len(blob)} bytes)")
    magic, version, header_len, header_crc = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{path}: not a tensor container (bad magic {magic!r})")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    start = _PREFIX.size + header_len
    if start > len(blob):
        raise CheckpointTruncatedError(f"{path}: file ends inside the header")
    if zlib.crc32(blob[_PREFIX.size : start]) != header_crc:
        raise CheckpointFormatError(f"{path}: header checksum mismatch")
    try:
        header = json.loads(blob[_PREFIX.size : start].decode("utf-8"))
        entries = header["tensors"]
        data_bytes = int(header["data_bytes"])
        crc = int(header["crc32"])
        found_kind = header["kind"]
        meta = header["meta"]
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable header ({exc})") from exc
    data = blob[start:]
    if len(data) < data_bytes:
        raise CheckpointTruncatedError(f"{path}: data block has {len(data)} of {data_bytes} bytes")
    if len(data) > data_bytes:
        raise CheckpointFormatError(f"{path}: {len(data) - data_bytes} trailing bytes after the data block")
    if zlib.crc32(data) != crc:
        raise CheckpointFormatError(f"{path}: data checksum mismatch")
    if kind is not None and found_kind != kind:
        raise CheckpointFormatError(f"{path}: expected a {kind!r} container, found {found_kind!r}")
    tensors = {}
    try:
        for e in entries:
            shape = tuple(int(s) for s in e["shape"])
            off, nbytes = int(e["offset"]), int(e["nbytes"])
            if any(s < 0 for s in shape) or nbytes != 4 * int(np.prod(shape)) or off < 0 or off + nbytes > data_bytes:
                raise CheckpointFormatError(f"{path}: directory entry {e.get('name')!r} is inconsistent")
            tensors[str(e["name"])] = np.frombuffer(data, dtype=_DATA, count=nbytes // 4, offset=off).reshape(shape).copy()
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"{path}: malformed tensor directory ({exc})") from exc
    return tensors, meta
