import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinyinfer import (
    CorruptionError,
    DType,
    FormatError,
    QuantParams,
    Shape,
    VersionError,
    WeightStore,
    load_input,
    load_weights,
    save_f32_input,
    save_raw_input,
    save_weights,
    tensor_new,
)
from tinyinfer.model_io import RAW_MAGIC, header_length


def small_store() -> WeightStore:
    s = WeightStore(metadata={"arch": "squeezenet_v1.0", "means": [104.0, 117.0, 123.0]})
    s.add("conv1.weight", np.arange(12, dtype=np.float32).reshape(3, 1, 2, 2))
    s.add("conv1.bias", np.array([0.5, -0.5, 2.0], np.float32))
    return s


# ---------------------------------------------------------------------------
# round trips

def test_two_entry_round_trip(tmp_path):
    path = tmp_path / "w.tiwf"
    s = small_store()
    save_weights(s, path)
    loaded = load_weights(path)
    assert loaded == s
    again = tmp_path / "w2.tiwf"
    save_weights(loaded, again)
    assert path.read_bytes() == again.read_bytes()


def test_quantized_entry_round_trip(tmp_path):
    s = WeightStore()
    q = QuantParams(0.031415, 129)
    s.add("act", np.arange(8, dtype=np.uint8).reshape(2, 4), quant=q)
    path = tmp_path / "q.tiwf"
    save_weights(s, path)
    loaded = load_weights(path)
    got = loaded.quant("act")
    assert got is not None
    assert got.zero_point == 129
    assert got.scale == pytest.approx(0.031415, rel=1e-6)  # stored as f32
    assert np.array_equal(loaded.array("act"), s.array("act"))


def test_empty_store_header_only(tmp_path):
    path = tmp_path / "empty.tiwf"
    save_weights(WeightStore(), path)
    assert path.stat().st_size == 20 + 2  # fixed fields + "{}"


def test_same_store_same_checksum(tmp_path):
    a, b = tmp_path / "a.tiwf", tmp_path / "b.tiwf"
    save_weights(small_store(), a)
    save_weights(small_store(), b)
    assert hashlib.sha256(a.read_bytes()).digest() == hashlib.sha256(b.read_bytes()).digest()


names = st.text(
    alphabet=st.characters(min_codepoint=33, max_codepoint=126), min_size=1, max_size=12
)


@settings(max_examples=40, deadline=None)
@given(
    entry_names=st.lists(names, min_size=0, max_size=5, unique=True),
    seed=st.integers(0, 2**31 - 1),
)
def test_random_store_round_trip(tmp_path_factory, entry_names, seed):
    rng = np.random.default_rng(seed)
    s = WeightStore(metadata={"seed": seed})
    for name in entry_names:
        rank = int(rng.integers(1, 5))
        shape = tuple(int(x) for x in rng.integers(1, 4, size=rank))
        kind = rng.integers(0, 3)
        if kind == 0:
            arr = rng.standard_normal(shape).astype(np.float32)
            s.add(name, arr)
        elif kind == 1:
            arr = rng.integers(0, 256, size=shape).astype(np.uint8)
            s.add(name, arr, quant=QuantParams(float(rng.uniform(0.01, 2)), 128))
        else:
            arr = rng.integers(-1000, 1000, size=shape).astype(np.int32)
            s.add(name, arr)
    path = tmp_path_factory.mktemp("rt") / "s.tiwf"
    save_weights(s, path)
    loaded = load_weights(path)
    assert loaded == s
    path2 = tmp_path_factory.mktemp("rt") / "s2.tiwf"
    save_weights(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


# ---------------------------------------------------------------------------
# validation and corruption

def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.tiwf"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(FormatError):
        load_weights(path)


def test_bad_version_rejected(tmp_path):
    path = tmp_path / "v9.tiwf"
    save_weights(WeightStore(), path)
    blob = bytearray(path.read_bytes())
    blob[4] = 9
    path.write_bytes(bytes(blob))
    with pytest.raises(VersionError):
        load_weights(path)


def test_truncated_record_names_entry(tmp_path):
    path = tmp_path / "cut.tiwf"
    save_weights(small_store(), path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 5])  # cut into conv1.bias payload
    with pytest.raises(CorruptionError, match="conv1.bias"):
        load_weights(path)


def test_trailing_garbage_rejected(tmp_path):
    path = tmp_path / "trail.tiwf"
    save_weights(small_store(), path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(CorruptionError):
        load_weights(path)


def test_wrong_payload_length_rejected(tmp_path):
    path = tmp_path / "len.tiwf"
    save_weights(small_store(), path)
    blob = bytearray(path.read_bytes())
    # the u64 length field of the first entry sits right after its fixed part
    marker = blob.find(b"conv1.weight") + len("conv1.weight") + 1 + 1 + 4 * 4 + 1
    blob[marker] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CorruptionError, match="conv1.weight"):
        load_weights(path)


def test_every_single_byte_header_corruption_rejected(tmp_path):
    path = tmp_path / "fuzz.tiwf"
    save_weights(small_store(), path)
    original = path.read_bytes()
    hdr_len = header_length(path)
    assert hdr_len > 20
    mutant = tmp_path / "mutant.tiwf"
    for offset in range(hdr_len):
        for flip in (0x01, 0xFF):
            blob = bytearray(original)
            blob[offset] ^= flip
            mutant.write_bytes(bytes(blob))
            with pytest.raises(FormatError):  # covers Version/Corruption subclasses
                load_weights(mutant)


def test_known_hex_fixture_little_endian(tmp_path):
    # one F32 entry "w" of shape (2,) holding [1.0, -2.0]; every multi-byte
    # field little-endian
    expected = bytes.fromhex(
        "54495746"          # "TIWF"
        "01000000"          # version 1
        "01000000"          # entry count 1
        "02000000"          # metadata length 2
        "43bfa6a3"          # crc32 of "{}"
        "7b7d"              # "{}"
        "0100" "77"         # name length 1, "w"
        "00" "01"           # dtype F32, rank 1
        "02000000"          # dim 2
        "00"                # no quant block
        "0800000000000000"  # payload: 8 bytes
        "0000803f"          # 1.0f
        "000000c0"          # -2.0f
    )
    s = WeightStore()
    s.add("w", np.array([1.0, -2.0], np.float32))
    path = tmp_path / "hex.tiwf"
    save_weights(s, path)
    assert path.read_bytes() == expected
    loaded = load_weights(path)
    assert np.array_equal(loaded.array("w"), np.array([1.0, -2.0], np.float32))


# ---------------------------------------------------------------------------
# input loading

def test_raw_input_all_zero_bytes(tmp_path):
    path = tmp_path / "zero.tiraw"
    save_raw_input(path, np.zeros((227, 227, 3), np.uint8))
    t = load_input(path, means=(0.0, 0.0, 0.0))
    assert t.shape.as_tuple() == (1, 3, 227, 227)
    assert not t.data.any()


def test_raw_input_constant_mean_subtraction(tmp_path):
    path = tmp_path / "c128.tiraw"
    save_raw_input(path, np.full((227, 227, 3), 128, np.uint8))
    t = load_input(path, means=(104.0, 117.0, 123.0))
    assert (t.data[0, 0] == 24.0).all()
    assert (t.data[0, 1] == 11.0).all()
    assert (t.data[0, 2] == 5.0).all()


def test_f32_input_round_trip_bit_identical(tmp_path, rng):
    t = tensor_new(Shape(1, 3, 227, 227), DType.F32)
    t.data[...] = rng.standard_normal(t.data.shape).astype(np.float32)
    path = tmp_path / "x.tif32"
    save_f32_input(path, t)
    back = load_input(path)
    assert np.array_equal(back.data, t.data)


def test_raw_input_channel_order(tmp_path):
    img = np.zeros((227, 227, 3), np.uint8)
    img[..., 0] = 10  # R
    img[..., 1] = 20  # G
    img[..., 2] = 30  # B
    path = tmp_path / "rgb.tiraw"
    save_raw_input(path, img)
    t = load_input(path, means=(0.0, 0.0, 0.0))
    assert (t.data[0, 0] == 10).all() and (t.data[0, 1] == 20).all() and (t.data[0, 2] == 30).all()


def test_input_wrong_payload_size_rejected(tmp_path):
    path = tmp_path / "short.tiraw"
    path.write_bytes(RAW_MAGIC + b"\x00" * 100)
    with pytest.raises(FormatError):
        load_input(path)


def test_input_unknown_magic_rejected(tmp_path):
    path = tmp_path / "who.bin"
    path.write_bytes(b"WHOKNOWS" + b"\x00" * (3 * 227 * 227))
    with pytest.raises(FormatError):
        load_input(path)
