"""Binary checkpoint serialization.

Layout, all integers little-endian:

    bytes 0-3   magic "QART"
    bytes 4-5   format version (u16)
    byte  6     training stage (u8)
    u32         config length, then that many bytes of UTF-8 JSON
    u32         array count
    per array:  u16 name length, name bytes,
                u8 ndim, ndim x u32 dims,
                float32 payload in C order
    u32         CRC32 of everything above

Arrays are written sorted by name and the config JSON uses sorted keys,
so saving the same state twice yields byte-identical files.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

MAGIC = b"QART"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def serialize_checkpoint(stage: int, config: dict,
                         arrays: dict[str, np.ndarray]) -> bytes:
    if not 0 <= stage <= 255:
        raise CheckpointError(f"stage {stage} does not fit in a byte")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", FORMAT_VERSION)
    out += struct.pack("<B", stage)
    blob = json.dumps(config, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    out += struct.pack("<I", len(blob))
    out += blob
    out += struct.pack("<I", len(arrays))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=np.float32)
        name_b = name.encode("utf-8")
        if len(name_b) > 0xFFFF:
            raise CheckpointError(f"parameter name too long: {name[:50]}...")
        out += struct.pack("<H", len(name_b))
        out += name_b
        out += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            out += struct.pack("<I", dim)
        if np.little_endian:
            out += arr.tobytes()
        else:
            out += arr.astype("<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def deserialize_checkpoint(raw: bytes):
    """Returns (stage, config, arrays). Raises CheckpointError on any
    structural or integrity problem."""
    if len(raw) < 15:
        raise CheckpointError("file too short to be a checkpoint")
    if raw[:4] != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file")
    (stored_crc,) = struct.unpack("<I", raw[-4:])
    actual_crc = zlib.crc32(raw[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CheckpointError(
            f"CRC mismatch: stored {stored_crc:#010x}, "
            f"computed {actual_crc:#010x}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version}")
    (stage,) = struct.unpack_from("<B", raw, 6)
    pos = 7
    (cfg_len,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    try:
        config = json.loads(raw[pos:pos + cfg_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"config blob unreadable: {e}") from e
    pos += cfg_len
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + name_len].decode("utf-8")
        pos += name_len
        ndim = raw[pos]
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, pos) if ndim else ()
        pos += 4 * ndim
        n_items = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        end = pos + 4 * n_items
        if end > len(raw) - 4:
            raise CheckpointError(f"array {name!r} runs past end of file")
        arr = np.frombuffer(raw[pos:end], dtype="<f4").reshape(shape)
        arrays[name] = arr.astype(np.float32, copy=True)
        pos = end
    if pos != len(raw) - 4:
        raise CheckpointError("trailing bytes after final array")
    return stage, config, arrays


def save_checkpoint(path, stage: int, config: dict,
                    arrays: dict[str, np.ndarray]) -> None:
    data = serialize_checkpoint(stage, config, arrays)
    with open(path, "wb") as f:
        f.write(data)


def load_checkpoint(path):
    with open(path, "rb") as f:
        return deserialize_checkpoint(f.read())
