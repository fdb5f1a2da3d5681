"""Volumetric data model and file I/O.

A :class:`Volume` is a dense 3D scalar field in Hounsfield Units with
(slice, row, column) axis order and physical spacing (dz, dy, dx) in mm.
A :class:`Mask` is a binary field aligned to its source volume.

Two containers are supported:

* NIfTI-1 single-file images (``.nii`` / ``.nii.gz``), spacing from pixdim,
  HU rescale (scl_slope / scl_inter) applied on load.
* A project raw format (``.raw``): little-endian IEEE-754 float32 voxels in
  C order, with a ``.hdr`` text sidecar of six lines - three shape integers
  followed by three spacing values. Masks use the same container with uint8
  voxels; the payload size disambiguates the two.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nifti
from .errors import (
    EmptyMaskWarning,
    HuRangeWarning,
    IOFailure,
    Misalignment,
    NonVolumetric,
    UnreadableFile,
)

HU_PLAUSIBLE = (-1024.0, 3071.0)


class MaskKind(enum.Enum):
    LUNGS = "lungs"
    LUNG_LEFT = "lung_left"
    LUNG_RIGHT = "lung_right"
    LESION = "lesion"


def _check_spacing(spacing):
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
        raise ValueError(f"spacing must be three positive finite values, got {spacing}")
    return spacing


@dataclass(frozen=True)
class Volume:
    """Immutable 3D scalar field with physical spacing metadata."""

    data: np.ndarray
    spacing: tuple[float, float, float]
    study_id: str = ""

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise NonVolumetric(f"expected 3 dims, got {data.ndim}")
        if min(data.shape) < 1:
            raise ValueError(f"degenerate shape {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("volume contains non-finite values")
        data = np.ascontiguousarray(data, dtype=np.float32)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def voxel_volume_mm3(self) -> float:
        dz, dy, dx = self.spacing
        return dz * dy * dx


@dataclass(frozen=True)
class Mask:
    """Binary field aligned to a source volume; values are exactly 0 or 1."""

    data: np.ndarray
    spacing: tuple[float, float, float]
    kind: MaskKind = MaskKind.LUNGS

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise NonVolumetric(f"expected 3 dims, got {data.ndim}")
        if data.dtype != np.uint8:
            if not np.isin(data, (0, 1)).all():
                raise ValueError("mask values must be exactly 0 or 1")
            data = data.astype(np.uint8)
        elif data.max(initial=0) > 1:
            raise ValueError("mask values must be exactly 0 or 1")
        data = np.ascontiguousarray(data)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def count(self) -> int:
        return int(self.data.sum())

    def require_aligned(self, other: "Volume | Mask") -> None:
        if self.shape != other.shape:
            raise Misalignment(f"shape {self.shape} vs {other.shape}")


# --- raw format ---

def _hdr_path(path: Path) -> Path:
    return path.with_suffix(".hdr")


def _write_raw(path: Path, data: np.ndarray, spacing) -> None:
    try:
        lines = [str(int(d)) for d in data.shape] + [repr(float(s)) for s in spacing]
        _hdr_path(path).write_text("\n".join(lines) + "\n")
        with open(path, "wb") as f:
            f.write(np.ascontiguousarray(data).tobytes(order="C"))
    except OSError as e:
        raise IOFailure(f"{path}: {e}") from e


def _read_raw(path: Path) -> tuple[np.ndarray, tuple[float, float, float]]:
    hdr = _hdr_path(path)
    if not hdr.exists():
        raise UnreadableFile(f"{path}: missing sidecar header {hdr.name}")
    try:
        values = hdr.read_text().split()
    except OSError as e:
        raise UnreadableFile(f"{hdr}: {e}") from e
    if len(values) != 6:
        raise UnreadableFile(f"{hdr}: expected 6 values, got {len(values)}")
    try:
        shape = tuple(int(v) for v in values[:3])
        spacing = tuple(float(v) for v in values[3:])
    except ValueError as e:
        raise UnreadableFile(f"{hdr}: {e}") from e
    n = int(np.prod(shape))
    payload = path.read_bytes()
    if len(payload) == 4 * n:
        data = np.frombuffer(payload, dtype="<f4").reshape(shape)
    elif len(payload) == n:
        data = np.frombuffer(payload, dtype="u1").reshape(shape)
    else:
        raise UnreadableFile(f"{path}: payload size {len(payload)} does not match shape {shape}")
    return data, spacing


# --- public I/O ---

VOLUME_SUFFIXES = (".nii", ".nii.gz", ".raw")


def _is_nifti(path: Path) -> bool:
    name = path.name.lower()
    return name.endswith(".nii") or name.endswith(".nii.gz")


def load_volume(path) -> Volume:
    """Load a volume, applying any HU rescale; flags implausible HU values."""
    path = Path(path)
    if not path.exists():
        raise UnreadableFile(f"{path}: no such file")
    if _is_nifti(path):
        data, spacing = nifti.read(path)
        study_id = path.name.split(".")[0]
    elif path.suffix == ".raw":
        data, spacing = _read_raw(path)
        study_id = path.stem
    else:
        raise UnreadableFile(f"{path}: unsupported format (expected {VOLUME_SUFFIXES})")
    lo, hi = HU_PLAUSIBLE
    if float(data.min()) < lo or float(data.max()) > hi:
        warnings.warn(
            f"{path.name}: HU outside [{lo:g}, {hi:g}] kept as-is", HuRangeWarning,
            stacklevel=2,
        )
    return Volume(data=data, spacing=spacing, study_id=study_id)


def save_volume(v: Volume, path) -> None:
    path = Path(path)
    if _is_nifti(path):
        nifti.write(path, v.data, v.spacing)
    elif path.suffix == ".raw":
        _write_raw(path, v.data.astype("<f4"), v.spacing)
    else:
        raise IOFailure(f"{path}: unsupported format (expected {VOLUME_SUFFIXES})")


def load_mask(path, kind: MaskKind = MaskKind.LUNGS) -> Mask:
    path = Path(path)
    if not path.exists():
        raise UnreadableFile(f"{path}: no such file")
    if _is_nifti(path):
        data, spacing = nifti.read(path)
    elif path.suffix == ".raw":
        data, spacing = _read_raw(path)
    else:
        raise UnreadableFile(f"{path}: unsupported format (expected {VOLUME_SUFFIXES})")
    return Mask(data=np.asarray(data), spacing=spacing, kind=kind)


def save_mask(m: Mask, path) -> None:
    path = Path(path)
    if _is_nifti(path):
        nifti.write(path, m.data, m.spacing)
    elif path.suffix == ".raw":
        _write_raw(path, m.data, m.spacing)
    else:
        raise IOFailure(f"{path}: unsupported format (expected {VOLUME_SUFFIXES})")


def bounding_box(m: Mask | np.ndarray):
    """Tightest half-open box ((z0,z1),(y0,y1),(x0,x1)) around the 1-voxels.

    An empty mask yields the full-volume box and an EmptyMaskWarning; the
    pipeline then degrades to whole-image processing instead of failing.
    """
    data = m.data if isinstance(m, Mask) else np.asarray(m)
    if not data.any():
        warnings.warn("empty mask: using full-volume bounding box", EmptyMaskWarning,
                      stacklevel=2)
        return tuple((0, s) for s in data.shape)
    box = []
    for axis in range(3):
        profile = np.any(data, axis=tuple(a for a in range(3) if a != axis))
        idx = np.flatnonzero(profile)
        box.append((int(idx[0]), int(idx[-1]) + 1))
    return tuple(box)
