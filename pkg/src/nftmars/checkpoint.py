"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"MARS" | u32 version | u32 meta_len | meta JSON (utf-8)
    u32 n_tensors
    per tensor: u16 name_len | name | u8 ndim | u64 * ndim shape | f64 data
    u32 CRC32 of every preceding byte
"""
import json
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"MARS"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(params, meta=None):
    parts = [MAGIC, struct.pack("<I", VERSION)]
    blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts += [struct.pack("<I", len(blob)), blob, struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = np.asarray(getattr(params[name], "data", params[name]), dtype="<f8", order="C")
        key = name.encode("utf-8")
        parts += [struct.pack("<H", len(key)), key, struct.pack("<B", arr.ndim),
                  struct.pack(f"<{arr.ndim}Q", *arr.shape), arr.tobytes()]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(raw):
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checksum mismatch: file is truncated or corrupt")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    pos = 8
    (n,) = struct.unpack_from("<I", body, pos)
    meta = json.loads(body[pos + 4:pos + 4 + n].decode("utf-8"))
    pos += 4 + n
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    params = {}
    for _ in range(count):
        (klen,) = struct.unpack_from("<H", body, pos)
        name = body[pos + 2:pos + 2 + klen].decode("utf-8")
        pos += 2 + klen
        (ndim,) = struct.unpack_from("<B", body, pos)
        shape = struct.unpack_from(f"<{ndim}Q", body, pos + 1)
        pos += 1 + 8 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(body, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(body):
        raise CheckpointError("trailing bytes after tensor table")
    return params, meta


def save_checkpoint(params, path, meta=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(params, meta))


def load_checkpoint(path):
    """Return (params as float64 arrays, metadata dict)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return decode(raw)
