"""Binary checkpoint container.

Layout (little-endian): b"CAIN", version u32, entry count u64, then per
entry: name length u32, UTF-8 name, dtype tag u8 (0 = float32, 1 = float64),
rank u8, rank x u64 dims, raw payload. A CRC32 of every preceding byte
closes the file.
"""

import struct
import zlib
from collections import OrderedDict

import numpy as np

MAGIC = b"CAIN"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(ValueError):
    pass


def encode(entries):
    """Serialise an ordered mapping name -> float32/float64 array to bytes."""
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(entries))]
    for name, arr in entries.items():
        arr = np.asarray(arr)
        if arr.dtype not in _TAGS:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        if arr.ndim > 255:
            raise ValueError(f"{name}: rank too large")
        raw = name.encode("utf-8")
        tag = _TAGS[arr.dtype]
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<BB", tag, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(blob):
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    if len(blob) < 4 + 12 + 4:
        raise CheckpointError("truncated checkpoint")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    version, count = struct.unpack_from("<IQ", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    if zlib.crc32(body) != crc:
        # a short file usually fails here too; tell the two apart when possible
        _walk(body, count, strict=False)
        raise CheckpointError("checksum mismatch: checkpoint corrupted")
    return _walk(body, count, strict=True)


def _walk(body, count, strict):
    out = OrderedDict()
    pos = 16

    def take(n):
        nonlocal pos
        if pos + n > len(body):
            raise CheckpointError("truncated checkpoint")
        chunk = body[pos:pos + n]
        pos += n
        return chunk

    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        tag, rank = struct.unpack("<BB", take(2))
        if tag not in _DTYPES:
            if not strict:
                return out
            raise CheckpointError(f"unknown dtype tag {tag}")
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        dt = _DTYPES[tag]
        n = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        out[name] = np.frombuffer(take(n), dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
    if strict and pos != len(body):
        raise CheckpointError("trailing bytes after last entry")
    return out


def save(path, entries):
    blob = encode(entries)
    with open(path, "wb") as fh:
        fh.write(blob)
    return path


def load(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
