"""Binary containers: TIWF weight files and TIRAW / TIF32 input files.

TIWF layout (all integers little-endian):

    magic   4 bytes  "TIWF"
    u32     version (currently 1)
    u32     entry count
    u32     metadata length in bytes
    u32     CRC-32 of the metadata bytes
    bytes   metadata: canonical JSON (sorted keys, compact separators)
    entries, each:
        u16   name length, then the UTF-8 name
        u8    dtype (0=F32, 1=U8, 2=I32)
        u8    rank (1..4)
        u32   dims[rank]
        u8    quant flag; if 1: f32 scale, i32 zero_point
        u64   payload byte length (must equal element count * dtype size)
        bytes payload

The file must end exactly after the last entry. Metadata carries the
architecture tag, preprocessing means, calibration activation params, and
provenance; writers must emit canonical JSON so identical stores produce
identical bytes.

Input files are a fixed 8-byte magic plus payload: "TIRAW001" with
3*227*227 interleaved RGB bytes, or "TIF32001" with a preprocessed planar
(1,3,227,227) little-endian f32 tensor.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptionError, FormatError, VersionError
from .quant import QuantParams
from .tensor import DType, Shape, Tensor, tensor_new

TIWF_MAGIC = b"TIWF"
TIWF_VERSION = 1
RAW_MAGIC = b"TIRAW001"
F32_MAGIC = b"TIF32001"

INPUT_HW = (227, 227)
INPUT_CHANNELS = 3
DEFAULT_MEANS = (104.0, 117.0, 123.0)

_DTYPE_CODES = {DType.F32: 0, DType.U8: 1, DType.I32: 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}
MAX_RANK = 4


@dataclass
class WeightEntry:
    name: str
    dtype: DType
    shape: tuple[int, ...]
    data: np.ndarray  # flat, little-endian canonical dtype
    quant: QuantParams | None = None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WeightEntry):
            return NotImplemented
        return (
            self.name == other.name
            and self.dtype is other.dtype
            and self.shape == other.shape
            and self.quant == other.quant
            and np.array_equal(self.data, other.data)
        )


@dataclass
class WeightStore:
    """Ordered name -> entry map plus free-form (JSON-able) metadata."""

    entries: dict[str, WeightEntry] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def add(self, name: str, array: np.ndarray, quant: QuantParams | None = None) -> None:
        if name in self.entries:
            raise FormatError(f"duplicate entry name {name!r}")
        if not 1 <= array.ndim <= MAX_RANK:
            raise FormatError(f"entry {name!r} rank {array.ndim} outside 1..{MAX_RANK}")
        dtype = _np_to_dtype(array.dtype)
        flat = np.ascontiguousarray(array, dtype=dtype.np_dtype).reshape(-1)
        if quant is not None:
            # the container stores scale as f32; hold the representable value
            quant = QuantParams(float(np.float32(quant.scale)), quant.zero_point)
        self.entries[name] = WeightEntry(name, dtype, tuple(array.shape), flat, quant)

    def array(self, name: str) -> np.ndarray:
        e = self.entries[name]
        return e.data.reshape(e.shape)

    def quant(self, name: str) -> QuantParams | None:
        return self.entries[name].quant

    # -- metadata helpers ------------------------------------------------

    def means(self) -> tuple[float, float, float]:
        m = self.metadata.get("means")
        if m is None:
            return DEFAULT_MEANS
        return (float(m[0]), float(m[1]), float(m[2]))

    def activation_params(self, key: str) -> QuantParams | None:
        table = self.metadata.get("activations", {})
        rec = table.get(key)
        if rec is None:
            return None
        return QuantParams(float(rec["scale"]), int(rec["zero_point"]))

    def set_activation_params(self, key: str, params: QuantParams) -> None:
        table = self.metadata.setdefault("activations", {})
        table[key] = {"scale": params.scale, "zero_point": params.zero_point}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WeightStore):
            return NotImplemented
        return (
            list(self.entries) == list(other.entries)
            and all(self.entries[k] == other.entries[k] for k in self.entries)
            and self.metadata == other.metadata
        )


def _np_to_dtype(np_dtype: np.dtype) -> DType:
    for dt, code in _DTYPE_CODES.items():
        if dt.np_dtype == np_dtype:
            return dt
    raise FormatError(f"dtype {np_dtype} is not storable (use f32, u8 or i32)")


# ---------------------------------------------------------------------------
# TIWF writer / reader

def save_weights(store: WeightStore, path) -> None:
    """Serialize a store. Same store always produces identical bytes."""
    meta = json.dumps(store.metadata, sort_keys=True, separators=(",", ":")).encode()
    parts = [
        TIWF_MAGIC,
        struct.pack("<III I", TIWF_VERSION, len(store.entries), len(meta), zlib.crc32(meta)),
        meta,
    ]
    for e in store.entries.values():
        name = e.name.encode()
        parts.append(struct.pack("<H", len(name)))
        parts.append(name)
        parts.append(struct.pack("<BB", _DTYPE_CODES[e.dtype], len(e.shape)))
        parts.append(struct.pack(f"<{len(e.shape)}I", *e.shape))
        if e.quant is not None:
            parts.append(struct.pack("<Bfi", 1, e.quant.scale, e.quant.zero_point))
        else:
            parts.append(struct.pack("<B", 0))
        payload = e.data.tobytes()
        parts.append(struct.pack("<Q", len(payload)))
        parts.append(payload)
    with open(path, "wb") as f:
        f.write(b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes, context: str = "file"):
        self.blob = blob
        self.pos = 0
        self.context = context

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CorruptionError(
                f"truncated {self.context}: needed {n} bytes at offset {self.pos}, "
                f"file ends at {len(self.blob)}"
            )
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_weights(path) -> WeightStore:
    """Parse and validate a TIWF file.

    Raises FormatError on a bad magic, VersionError on an unsupported
    version, CorruptionError on any structural damage (the message names
    the offending entry where one is identifiable).
    """
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob, "header")
    if r.take(4) != TIWF_MAGIC:
        raise FormatError(f"{path}: bad magic, not a TIWF file")
    version, count, meta_len, meta_crc = r.unpack("<IIII")
    if version != TIWF_VERSION:
        raise VersionError(f"{path}: unsupported TIWF version {version}")
    meta_bytes = r.take(meta_len)
    if zlib.crc32(meta_bytes) != meta_crc:
        raise CorruptionError(f"{path}: metadata checksum mismatch")
    try:
        metadata = json.loads(meta_bytes.decode("utf-8")) if meta_len else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptionError(f"{path}: metadata is not valid JSON: {e}") from e
    if not isinstance(metadata, dict):
        raise CorruptionError(f"{path}: metadata must be a JSON object")

    store = WeightStore(metadata=metadata)
    for index in range(count):
        r.context = f"entry {index}"
        (name_len,) = r.unpack("<H")
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CorruptionError(f"entry {index}: name is not UTF-8") from e
        r.context = f"entry {index} ({name!r})"
        code, rank = r.unpack("<BB")
        dtype = _CODE_DTYPES.get(code)
        if dtype is None:
            raise CorruptionError(f"entry {name!r}: unknown dtype code {code}")
        if not 1 <= rank <= MAX_RANK:
            raise CorruptionError(f"entry {name!r}: rank {rank} outside 1..{MAX_RANK}")
        shape = r.unpack(f"<{rank}I")
        if any(d < 1 for d in shape):
            raise CorruptionError(f"entry {name!r}: zero extent in shape {shape}")
        (qflag,) = r.unpack("<B")
        quant = None
        if qflag == 1:
            scale, zero_point = r.unpack("<fi")
            if not (scale > 0 and np.isfinite(scale)) or not 0 <= zero_point <= 255:
                raise CorruptionError(
                    f"entry {name!r}: invalid quant params scale={scale} zp={zero_point}"
                )
            quant = QuantParams(float(scale), int(zero_point))
        elif qflag != 0:
            raise CorruptionError(f"entry {name!r}: quant flag {qflag} must be 0 or 1")
        (nbytes,) = r.unpack("<Q")
        expected = int(np.prod(shape)) * dtype.itemsize
        if nbytes != expected:
            raise CorruptionError(
                f"entry {name!r}: payload {nbytes} bytes != shape {shape} x "
                f"{dtype.value} = {expected}"
            )
        payload = r.take(nbytes)
        if name in store.entries:
            raise CorruptionError(f"entry {name!r}: duplicate name")
        data = np.frombuffer(payload, dtype=dtype.np_dtype).copy()
        store.entries[name] = WeightEntry(name, dtype, tuple(shape), data, quant)
    if r.pos != len(blob):
        raise CorruptionError(f"{path}: {len(blob) - r.pos} trailing bytes after last entry")
    return store


def header_length(path) -> int:
    """Bytes covered by the header (fixed fields + metadata); used by the
    corruption fuzz tests."""
    with open(path, "rb") as f:
        head = f.read(20)
    if len(head) < 20:
        return len(head)
    (meta_len,) = struct.unpack("<I", head[12:16])
    return 20 + meta_len


# ---------------------------------------------------------------------------
# input loading

def load_input(path, means: tuple[float, float, float] = DEFAULT_MEANS) -> Tensor:
    """Load a (1, 3, 227, 227) F32 input tensor.

    TIRAW payloads are interleaved RGB bytes; each channel gets its mean
    subtracted (x = byte - mean[c]). TIF32 payloads are already
    preprocessed planar tensors and are loaded bit-for-bit as saved.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 8:
        raise FormatError(f"{path}: too short to hold an input magic")
    magic, payload = blob[:8], blob[8:]
    h, w = INPUT_HW
    out = tensor_new(Shape(1, INPUT_CHANNELS, h, w), DType.F32)
    if magic == RAW_MAGIC:
        expected = INPUT_CHANNELS * h * w
        if len(payload) != expected:
            raise FormatError(f"{path}: TIRAW payload {len(payload)} bytes != {expected}")
        hwc = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, INPUT_CHANNELS)
        for c in range(INPUT_CHANNELS):
            out.data[0, c] = hwc[:, :, c].astype(np.float32) - np.float32(means[c])
    elif magic == F32_MAGIC:
        expected = INPUT_CHANNELS * h * w * 4
        if len(payload) != expected:
            raise FormatError(f"{path}: TIF32 payload {len(payload)} bytes != {expected}")
        out.data[...] = np.frombuffer(payload, dtype="<f4").reshape(1, INPUT_CHANNELS, h, w)
    else:
        raise FormatError(f"{path}: unknown input magic {magic!r}")
    return out


def save_raw_input(path, rgb_hwc: np.ndarray) -> None:
    """Write interleaved RGB bytes (227, 227, 3) as a TIRAW file."""
    h, w = INPUT_HW
    if rgb_hwc.shape != (h, w, INPUT_CHANNELS) or rgb_hwc.dtype != np.uint8:
        raise FormatError(f"TIRAW wants uint8 ({h},{w},{INPUT_CHANNELS}), got "
                          f"{rgb_hwc.dtype} {rgb_hwc.shape}")
    with open(path, "wb") as f:
        f.write(RAW_MAGIC)
        f.write(np.ascontiguousarray(rgb_hwc).tobytes())


def save_f32_input(path, tensor: Tensor) -> None:
    """Write a preprocessed planar tensor as a TIF32 file."""
    h, w = INPUT_HW
    if tensor.shape.as_tuple() != (1, INPUT_CHANNELS, h, w) or tensor.dtype is not DType.F32:
        raise FormatError(f"TIF32 wants F32 (1,{INPUT_CHANNELS},{h},{w}), got "
                          f"{tensor.dtype} {tensor.shape.as_tuple()}")
    with open(path, "wb") as f:
        f.write(F32_MAGIC)
        f.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
