"""Round-trip and byte-level checks for the tensor container."""

import struct

import numpy as np
import pytest

from lsx.checkpoint import CheckpointError, load_tensors, save_tensors


def test_roundtrip_preserves_values_shapes_dtypes(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "w": rng.standard_normal((3, 4)).astype(np.float32),
        "scale": np.array(2.5, dtype=np.float64),
        "bn.mean": rng.standard_normal(7),
        "deep.nested.name": rng.standard_normal((2, 3, 4)).astype(np.float32),
        "empty": np.zeros((0, 5), dtype=np.float64),
    }
    path = tmp_path / "model.lsxc"
    save_tensors(path, tensors)
    back = load_tensors(path)
    assert set(back) == set(tensors)
    for name, arr in tensors.items():
        assert back[name].dtype == arr.dtype
        assert back[name].shape == arr.shape
        np.testing.assert_array_equal(back[name], arr)


def test_same_content_gives_identical_bytes(tmp_path):
    tensors = {"a": np.arange(6, dtype=np.float64).reshape(2, 3)}
    p1, p2 = tmp_path / "a.lsxc", tmp_path / "b.lsxc"
    save_tensors(p1, tensors)
    save_tensors(p2, {"a": tensors["a"].copy()})
    assert p1.read_bytes() == p2.read_bytes()


def test_header_layout_is_as_documented(tmp_path):
    path = tmp_path / "one.lsxc"
    save_tensors(path, {"xy": np.float32([1.0, 2.0])})
    blob = path.read_bytes()
    assert blob[:4] == b"LSXC"
    version, count = struct.unpack_from("<II", blob, 4)
    assert (version, count) == (1, 1)
    (name_len,) = struct.unpack_from("<I", blob, 12)
    assert name_len == 2
    assert blob[16:18] == b"xy"
    (rank,) = struct.unpack_from("<I", blob, 18)
    assert rank == 1
    (extent,) = struct.unpack_from("<Q", blob, 22)
    assert extent == 2
    assert blob[30] == 4  # float32 tag
    np.testing.assert_array_equal(np.frombuffer(blob[31:], dtype="<f4"), [1.0, 2.0])
    assert len(blob) == 31 + 8


def test_rejects_bad_magic_and_version(tmp_path):
    path = tmp_path / "bad.lsxc"
    path.write_bytes(b"NOPE" + b"\x00" * 8)
    with pytest.raises(CheckpointError):
        load_tensors(path)
    good = tmp_path / "good.lsxc"
    save_tensors(good, {"a": np.zeros(1, dtype=np.float32)})
    blob = bytearray(good.read_bytes())
    blob[4] = 99
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_tensors(path)


def test_rejects_trailing_garbage_and_unknown_tag(tmp_path):
    path = tmp_path / "t.lsxc"
    save_tensors(path, {"a": np.zeros(2, dtype=np.float64)})
    path.write_bytes(path.read_bytes() + b"x")
    with pytest.raises(CheckpointError):
        load_tensors(path)

    save_tensors(path, {"a": np.zeros(2, dtype=np.float64)})
    blob = bytearray(path.read_bytes())
    # precision tag sits right before the payload
    blob[len(blob) - 16 - 1] = 9
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_tensors(path)


def test_rejects_unsupported_dtype(tmp_path):
    with pytest.raises(CheckpointError):
        save_tensors(tmp_path / "x.lsxc", {"a": np.arange(3)})  # int64


def test_no_tmp_file_left_behind(tmp_path):
    path = tmp_path / "m.lsxc"
    save_tensors(path, {"a": np.zeros(1, dtype=np.float32)})
    assert sorted(p.name for p in tmp_path.iterdir()) == ["m.lsxc"]
