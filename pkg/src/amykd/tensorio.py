"""Raw-tensor container and minimal NIfTI-1 ingestion.

Container layout (little-endian): 16-byte magic ``AMYKD-TENSOR\\0\\0\\0\\0``,
u32 rank, u32 dims[rank], float32 payload in row-major order. A JSON
sidecar (``<file>.json``) carries {modality, subject_id, session_id}.
"""

from __future__ import annotations

import gzip
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"AMYKD-TENSOR\x00\x00\x00\x00"


def save_tensor(path: str | Path, array: np.ndarray, sidecar: dict | None = None) -> Path:
    path = Path(path)
    arr = np.ascontiguousarray(array, dtype=np.float32)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes())
    if sidecar is not None:
        with open(path.with_suffix(path.suffix + ".json"), "w") as f:
            json.dump(sidecar, f, indent=2)
    return path


def load_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(16)
        if magic != MAGIC:
            raise DataError(f"{path}: not a raw-tensor container (bad magic)")
        (rank,) = struct.unpack("<I", f.read(4))
        if rank == 0 or rank > 8:
            raise DataError(f"{path}: implausible tensor rank {rank}")
        dims = struct.unpack(f"<{rank}I", f.read(4 * rank))
        payload = f.read()
    expected = int(np.prod(dims)) * 4
    if len(payload) != expected:
        raise DataError(f"{path}: payload size {len(payload)} != expected {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def load_sidecar(path: str | Path) -> dict:
    path = Path(path)
    with open(path.with_suffix(path.suffix + ".json")) as f:
        return json.load(f)


def load_nifti(path: str | Path) -> np.ndarray:
    """Read a single-file NIfTI-1 volume (.nii or .nii.gz), data only.

    Volumes are assumed already rigidly registered and RAS-oriented
    upstream; no affine handling is performed here.
    """
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        header = f.read(348)
        if len(header) < 348:
            raise DataError(f"{path}: truncated NIfTI header")
        sizeof_hdr = struct.unpack("<i", header[:4])[0]
        if sizeof_hdr != 348:
            raise DataError(f"{path}: not a little-endian NIfTI-1 file")
        if header[344:348] not in (b"n+1\x00", b"ni1\x00"):
            raise DataError(f"{path}: missing NIfTI-1 magic")
        dim = struct.unpack("<8h", header[40:56])
        ndim = dim[0]
        if ndim < 3:
            raise DataError(f"{path}: expected a 3D volume, got ndim={ndim}")
        shape = dim[1:4]
        datatype = struct.unpack("<h", header[70:72])[0]
        vox_offset = int(struct.unpack("<f", header[108:112])[0])
        dtype = {2: np.uint8, 4: np.int16, 8: np.int32, 16: np.float32, 64: np.float64}.get(datatype)
        if dtype is None:
            raise DataError(f"{path}: unsupported NIfTI datatype code {datatype}")
        f.seek(vox_offset)
        count = int(np.prod(shape))
        data = np.frombuffer(f.read(count * np.dtype(dtype).itemsize), dtype=dtype)
        if data.size != count:
            raise DataError(f"{path}: truncated NIfTI payload")
    # NIfTI stores Fortran order (x fastest); return with x as axis 0.
    return np.asarray(data.reshape(shape, order="F"), dtype=np.float32)
