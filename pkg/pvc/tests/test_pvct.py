import struct

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from pvc.errors import PvctFormatError
from pvc.utils.pvct import (
    MAGIC,
    decode_tensor,
    encode_tensor,
    load_bundle,
    read_manifest,
    read_tensor,
    save_bundle,
    write_tensor,
)
from pvc.utils.tensor_engine import Rng


def test_header_layout():
    raw = encode_tensor(np.arange(6.0).reshape(2, 3))
    assert raw[:4] == MAGIC
    assert struct.unpack("<II", raw[4:12]) == (1, 2)
    assert struct.unpack("<QQ", raw[12:28]) == (2, 3)
    assert struct.unpack("<6d", raw[28:]) == (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)


def test_file_roundtrip_is_bitwise(tmp_path):
    x = Rng(9).normal((2, 3, 4, 5))
    x[0, 0, 0, 0] = -0.0
    x[1, 2, 3, 4] = 1e-310
    path = write_tensor(tmp_path / "x.pvct", x)
    y = read_tensor(path)
    assert y.shape == x.shape
    assert y.tobytes() == x.tobytes()


def test_bad_magic():
    raw = encode_tensor(np.zeros(3))
    with pytest.raises(PvctFormatError):
        decode_tensor(b"XXXX" + raw[4:])


def test_bad_version():
    raw = bytearray(encode_tensor(np.zeros(3)))
    raw[4:8] = struct.pack("<I", 2)
    with pytest.raises(PvctFormatError):
        decode_tensor(bytes(raw))


def test_truncated_payload():
    raw = encode_tensor(np.zeros((4, 4)))
    with pytest.raises(PvctFormatError):
        decode_tensor(raw[:-8])
    with pytest.raises(PvctFormatError):
        decode_tensor(raw[:14])


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_tensor(tmp_path / "nope.pvct")


def test_bundle_roundtrip(tmp_path):
    tensors = {"a.w": np.eye(3), "b": np.arange(4.0)}
    path = save_bundle(tmp_path / "bundle", tensors, {"kind": "test"})
    manifest, loaded = load_bundle(path)
    assert manifest["kind"] == "test"
    assert manifest["tensors"] == {"a.w": "a.w.pvct", "b": "b.pvct"}
    for name, t in tensors.items():
        assert_array_equal(loaded[name], t)


def test_manifest_must_be_mapping(tmp_path):
    path = tmp_path / "m.yaml"
    path.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(PvctFormatError):
        read_manifest(path)
