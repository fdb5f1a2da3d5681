"""Minimal NIfTI-1 single-file (.nii / .nii.gz) reader and writer.

Covers exactly what the pipeline needs: 3D scalar images, voxel spacing from
pixdim, and HU rescaling via scl_slope/scl_inter. Arrays are exchanged in
(slice, row, column) = (z, y, x) order; on disk NIfTI stores x fastest, which
a C-order (nz, ny, nx) reshape maps to directly.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import MissingSpacing, NonVolumetric, UnreadableFile

_HDR_SIZE = 348
_HDR_FMT = "<i10s18sihcc8h3fhhhh8ffffhBB4fii80s24shh6f12f16s4s"

_DTYPES = {
    2: np.dtype("u1"),
    4: np.dtype("i2"),
    8: np.dtype("i4"),
    16: np.dtype("f4"),
    64: np.dtype("f8"),
    256: np.dtype("i1"),
    512: np.dtype("u2"),
    768: np.dtype("u4"),
}
_CODES = {np.dtype("u1"): (2, 8), np.dtype("f4"): (16, 32)}


def _open(path: Path, mode: str):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def read(path) -> tuple[np.ndarray, tuple[float, float, float]]:
    """Read a NIfTI-1 file; returns (data as (z,y,x) float32, (dz,dy,dx) mm).

    scl_slope/scl_inter are applied when present (slope of 0 means unset).
    """
    path = Path(path)
    try:
        with _open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise UnreadableFile(f"{path}: {e}") from e
    if len(raw) < _HDR_SIZE:
        raise UnreadableFile(f"{path}: truncated header")

    fmt = _HDR_FMT
    if struct.unpack_from("<i", raw)[0] != _HDR_SIZE:
        if struct.unpack_from(">i", raw)[0] != _HDR_SIZE:
            raise UnreadableFile(f"{path}: not a NIfTI-1 file")
        fmt = ">" + _HDR_FMT[1:]
    fields = struct.unpack_from(fmt, raw)
    magic = fields[-1]
    if magic[:3] not in (b"n+1", b"ni1"):
        raise UnreadableFile(f"{path}: bad magic {magic!r}")

    dim = fields[7:15]
    ndim = dim[0]
    if ndim < 3:
        raise NonVolumetric(f"{path}: {ndim}-dimensional image")
    shape_xyz = [max(1, d) for d in dim[1 : 1 + ndim]]
    if any(d != 1 for d in shape_xyz[3:]):
        raise UnreadableFile(f"{path}: >3 non-singleton dimensions")
    nx, ny, nz = shape_xyz[:3]

    datatype = fields[19]
    if datatype not in _DTYPES:
        raise UnreadableFile(f"{path}: unsupported datatype code {datatype}")
    dtype = _DTYPES[datatype].newbyteorder(fmt[0])

    pixdim = fields[22:30]
    dx, dy, dz = pixdim[1], pixdim[2], pixdim[3]
    if not all(np.isfinite(s) and s > 0 for s in (dx, dy, dz)):
        raise MissingSpacing(f"{path}: pixdim {(dx, dy, dz)} unusable")

    vox_offset = int(fields[30])
    n = nx * ny * nz
    payload = raw[vox_offset : vox_offset + n * dtype.itemsize]
    if len(payload) != n * dtype.itemsize:
        raise UnreadableFile(f"{path}: truncated voxel data")
    data = np.frombuffer(payload, dtype=dtype).reshape((nz, ny, nx))

    slope, inter = fields[31], fields[32]
    data = data.astype(np.float32)
    if slope != 0 and not (slope == 1.0 and inter == 0.0):
        data = data * np.float32(slope) + np.float32(inter)
    return data, (float(dz), float(dy), float(dx))


def write(path, data: np.ndarray, spacing) -> None:
    """Write a 3D (z,y,x) array with (dz,dy,dx) spacing as single-file NIfTI-1."""
    path = Path(path)
    arr = np.ascontiguousarray(data)
    if arr.dtype != np.uint8:
        arr = arr.astype("<f4")
    datatype, bitpix = _CODES[np.dtype("u1") if arr.dtype == np.uint8 else np.dtype("f4")]
    nz, ny, nx = arr.shape
    dz, dy, dx = (float(s) for s in spacing)

    dim = (3, nx, ny, nz, 1, 1, 1, 1)
    pixdim = (1.0, dx, dy, dz, 0.0, 0.0, 0.0, 0.0)
    srow_x = (dx, 0.0, 0.0, 0.0)
    srow_y = (0.0, dy, 0.0, 0.0)
    srow_z = (0.0, 0.0, dz, 0.0)
    header = struct.pack(
        _HDR_FMT,
        _HDR_SIZE, b"", b"", 0, 0, b"r", b"\0",
        *dim,
        0.0, 0.0, 0.0, 0,
        datatype, bitpix, 0,
        *pixdim,
        352.0, 1.0, 0.0,
        0, 0, 0, 0.0, 0.0, 0.0, 0.0, 0, 0,
        b"cttriage", b"",
        0, 1,
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        *srow_x, *srow_y, *srow_z,
        b"", b"n+1\0",
    )
    with _open(path, "wb") as f:
        f.write(header)
        f.write(b"\0\0\0\0")  # no extensions
        f.write(arr.tobytes(order="C"))
