"""Raw tensor container and minimal NIfTI reading."""

import struct

import numpy as np
import pytest

from amykd.errors import DataError
from amykd.tensorio import load_nifti, load_sidecar, load_tensor, save_tensor


def test_roundtrip(tmp_path):
    arr = np.random.default_rng(0).random((3, 4, 5)).astype(np.float32)
    path = tmp_path / "vol.amt"
    save_tensor(path, arr, sidecar={"subject": "s1"})
    back = load_tensor(path)
    assert back.dtype == np.float32
    assert np.array_equal(back, arr)
    assert load_sidecar(path) == {"subject": "s1"}


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.amt"
    path.write_bytes(b"NOT-A-TENSOR-FILE" + b"\x00" * 32)
    with pytest.raises(DataError):
        load_tensor(path)


def test_truncated_payload_rejected(tmp_path):
    arr = np.ones((4, 4), dtype=np.float32)
    path = tmp_path / "t.amt"
    save_tensor(path, arr)
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(DataError):
        load_tensor(path)


def _write_minimal_nifti(path, arr):
    header = bytearray(348)
    struct.pack_into("<i", header, 0, 348)
    dims = (arr.ndim,) + arr.shape + (1,) * (7 - arr.ndim)
    struct.pack_into("<8h", header, 40, *dims)
    struct.pack_into("<h", header, 70, 16)  # float32
    struct.pack_into("<h", header, 72, 32)
    struct.pack_into("<f", header, 108, 352.0)  # vox_offset
    header[344:348] = b"n+1\x00"
    with open(path, "wb") as f:
        f.write(header)
        f.write(b"\x00" * 4)
        f.write(np.asfortranarray(arr).tobytes(order="F"))


def test_nifti_reader(tmp_path):
    arr = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    path = tmp_path / "vol.nii"
    _write_minimal_nifti(path, arr)
    back = load_nifti(path)
    assert back.shape == (2, 3, 4)
    assert np.array_equal(back, arr)
