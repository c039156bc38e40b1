#!/usr/bin/env python3
"""
Checkpoint Container
Versioned binary container of named fp64 blobs plus a JSON metadata header

Layout (little-endian): magic b"DNICKPT\\0", uint32 version, uint32 metadata length,
metadata JSON (sorted keys), uint32 blob count, then per blob uint16 name length, name,
uint8 ndim, ndim x uint64 dims, fp64 payload. Blob order is preserved.
"""

import json
import logging
import os
import struct
from collections import OrderedDict
from typing import Dict, Tuple

import numpy as np

from dni_lab.errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"DNICKPT\0"
VERSION = 1


def encode_checkpoint(metadata: Dict, blobs: "OrderedDict[str, np.ndarray]") -> bytes:
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(blobs))]
    for name, value in blobs.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, raw: bytes, path: str):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated at byte {self.pos}")
        chunk = self.raw[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(raw: bytes, path: str = "<bytes>") -> Tuple[Dict, "OrderedDict[str, np.ndarray]"]:
    reader = _Reader(raw, path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a dni_lab checkpoint")
    version, meta_len = reader.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        metadata = json.loads(reader.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: bad metadata header: {e}") from e
    (count,) = reader.unpack("<I")
    blobs = OrderedDict()
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}Q")
        size = int(np.prod(shape)) if ndim else 1
        blobs[name] = np.frombuffer(reader.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
    if reader.pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - reader.pos} trailing bytes")
    return metadata, blobs


def save_checkpoint(path: str, metadata: Dict, blobs: "OrderedDict[str, np.ndarray]") -> str:
    """Write atomically (temp file + rename)"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as f:
            f.write(encode_checkpoint(metadata, blobs))
        os.replace(tmp, path)
    except OSError as e:
        raise OSError(f"Could not write checkpoint {path}: {e}") from e
    logger.info(f"Checkpoint saved to {path} (iteration {metadata.get('iteration')})")
    return path


def load_checkpoint(path: str) -> Tuple[Dict, "OrderedDict[str, np.ndarray]"]:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise OSError(f"Could not read checkpoint {path}: {e}") from e
    return decode_checkpoint(raw, path)
