"""Standalone TIWF writer.

Deliberately independent of the engine package: the byte format is the
interface. Layout (little-endian throughout):

    "TIWF" | u32 version=1 | u32 entry_count | u32 meta_len | u32 meta_crc32
    metadata: canonical JSON (sorted keys, compact separators)
    per entry: u16 name_len, name, u8 dtype(0=f32,1=u8,2=i32), u8 rank,
               u32 dims[rank], u8 quant_flag (+ f32 scale, i32 zero_point),
               u64 payload_len, payload
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

MAGIC = b"TIWF"
VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("u1"): 1,
    np.dtype("<i4"): 2,
}


class ExportError(RuntimeError):
    pass


def encode_tiwf(entries: list[tuple[str, np.ndarray, tuple[float, int] | None]],
                metadata: dict) -> bytes:
    """Entries are (name, array, optional (scale, zero_point))."""
    meta = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<IIII", VERSION, len(entries), len(meta), zlib.crc32(meta)),
             meta]
    seen = set()
    for name, array, quant in entries:
        if name in seen:
            raise ExportError(f"duplicate entry {name!r}")
        seen.add(name)
        dtype = np.dtype(array.dtype).newbyteorder("<") if array.dtype.kind == "f" \
            else np.dtype(array.dtype)
        code = _DTYPE_CODES.get(np.dtype(dtype))
        if code is None:
            raise ExportError(f"entry {name!r}: dtype {array.dtype} not representable in TIWF")
        if not 1 <= array.ndim <= 4:
            raise ExportError(f"entry {name!r}: rank {array.ndim} outside 1..4")
        payload = np.ascontiguousarray(array, dtype=dtype).tobytes()
        nm = name.encode()
        parts.append(struct.pack("<H", len(nm)))
        parts.append(nm)
        parts.append(struct.pack("<BB", code, array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        if quant is not None:
            scale, zp = quant
            parts.append(struct.pack("<Bfi", 1, scale, zp))
        else:
            parts.append(struct.pack("<B", 0))
        parts.append(struct.pack("<Q", len(payload)))
        parts.append(payload)
    return b"".join(parts)


def write_tiwf(path, entries, metadata: dict) -> None:
    with open(path, "wb") as f:
        f.write(encode_tiwf(entries, metadata))
