"""Binary checkpoint container (``FPCK``).

Layout, little-endian::

    b"FPCK" | u16 version | u8 model kind | u32 config length | config JSON (UTF-8)
    then until EOF, per tensor:
    u16 name length | name (UTF-8) | u8 rank | u32 dim * rank | float32 data (row-major)
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..errors import UnsupportedFormatError

MAGIC = b"FPCK"
VERSION = 1
_HEAD = struct.Struct("<4sHBI")


def encode_checkpoint(model_kind: int, config: dict, tensors) -> bytes:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_HEAD.pack(MAGIC, VERSION, model_kind, len(blob)), blob]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes):
    """Return ``(model_kind, config, OrderedDict[name -> float32 array])``."""
    if len(buf) < _HEAD.size:
        raise UnsupportedFormatError("header length", len(buf), f">= {_HEAD.size}")
    magic, version, kind, blob_len = _HEAD.unpack_from(buf)
    if magic != MAGIC:
        raise UnsupportedFormatError("magic", magic, MAGIC)
    if version != VERSION:
        raise UnsupportedFormatError("version", version, VERSION)
    pos = _HEAD.size
    config = json.loads(buf[pos : pos + blob_len].decode("utf-8"))
    pos += blob_len
    tensors = OrderedDict()
    while pos < len(buf):
        (name_len,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        end = pos + 4 * count
        if end > len(buf):
            raise UnsupportedFormatError(f"tensor {name!r} length", len(buf) - pos, 4 * count)
        tensors[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
        pos = end
    return kind, config, tensors


def save_checkpoint(path, model_kind: int, config: dict, tensors):
    Path(path).write_bytes(encode_checkpoint(model_kind, config, tensors))


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())
