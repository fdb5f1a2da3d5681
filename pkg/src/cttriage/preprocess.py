"""Canonicalization applied before any network: slice-wise in-plane
resampling to a fixed pixel spacing, intensity normalization to [0, 1],
and cropping to the lung bounding box.

Nothing here resamples along the slice axis; models are trained across
heterogeneous slice spacings and process slices independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DegenerateOutput
from .volume import Mask, Volume, bounding_box

MIN_INPLANE = 8


@dataclass(frozen=True)
class PreprocessConfig:
    target_pixel_spacing: tuple[float, float] = (2.0, 2.0)
    hu_window: tuple[float, float] = (-1024.0, 300.0)
    image_interpolation: str = "linear"  # or "nearest"
    mask_interpolation: str = "nearest"

    def __post_init__(self):
        lo, hi = self.hu_window
        if not lo < hi:
            raise ValueError(f"hu_window must satisfy lo < hi, got {self.hu_window}")
        if any(s <= 0 for s in self.target_pixel_spacing):
            raise ValueError(f"target spacing must be positive, got {self.target_pixel_spacing}")
        if self.image_interpolation not in ("linear", "nearest"):
            raise ValueError(f"unknown interpolation {self.image_interpolation!r}")

    def to_dict(self) -> dict:
        return {
            "target_pixel_spacing": list(self.target_pixel_spacing),
            "hu_window": list(self.hu_window),
            "image_interpolation": self.image_interpolation,
            "mask_interpolation": self.mask_interpolation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessConfig":
        d = dict(d)
        for key in ("target_pixel_spacing", "hu_window"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _inplane_output_shape(shape, spacing, target):
    _, h, w = shape
    _, dy, dx = spacing
    tdy, tdx = target
    new_h = max(1, int(round(h * dy / tdy)))
    new_w = max(1, int(round(w * dx / tdx)))
    return new_h, new_w


def _resample_slices(data: np.ndarray, new_hw: tuple[int, int], order: int) -> np.ndarray:
    s, h, w = data.shape
    new_h, new_w = new_hw
    if (new_h, new_w) == (h, w):
        return np.array(data)
    out = np.empty((s, new_h, new_w), dtype=np.float32)
    factors = (new_h / h, new_w / w)
    for i in range(s):
        out[i] = ndimage.zoom(
            data[i].astype(np.float32), factors, order=order, mode="nearest",
            grid_mode=True,
        )
    return out


def resample_axial(v: Volume, cfg: PreprocessConfig = PreprocessConfig()) -> Volume:
    """Resample each axial slice independently to the target (dy, dx) spacing.

    The slice count and dz are unchanged.
    """
    new_hw = _inplane_output_shape(v.shape, v.spacing, cfg.target_pixel_spacing)
    if min(new_hw) < MIN_INPLANE:
        raise DegenerateOutput(
            f"resampling {v.shape} at {v.spacing} to {cfg.target_pixel_spacing} mm "
            f"gives in-plane size {new_hw}"
        )
    order = 1 if cfg.image_interpolation == "linear" else 0
    data = _resample_slices(v.data, new_hw, order)
    spacing = (v.spacing[0], cfg.target_pixel_spacing[0], cfg.target_pixel_spacing[1])
    return Volume(data=data, spacing=spacing, study_id=v.study_id)


def resample_axial_mask(m: Mask, cfg: PreprocessConfig = PreprocessConfig()) -> Mask:
    """Nearest-neighbor in-plane resampling; preserves binarity."""
    new_hw = _inplane_output_shape(m.shape, m.spacing, cfg.target_pixel_spacing)
    data = _resample_slices(m.data.astype(np.float32), new_hw, order=0)
    spacing = (m.spacing[0], cfg.target_pixel_spacing[0], cfg.target_pixel_spacing[1])
    return Mask(data=data.astype(np.uint8), spacing=spacing, kind=m.kind)


def resize_mask_inplane(m: Mask, target_hw: tuple[int, int],
                        target_spacing: tuple[float, float, float]) -> Mask:
    """Nearest-neighbor resize of each slice to an explicit (H, W), used to
    re-embed predictions into the source-image geometry."""
    data = _resample_slices(m.data.astype(np.float32), tuple(target_hw), order=0)
    return Mask(data=data.astype(np.uint8), spacing=target_spacing, kind=m.kind)


def normalize_intensity(v: Volume, cfg: PreprocessConfig = PreprocessConfig()) -> Volume:
    """Clip to the HU window and map it affinely onto [0, 1]."""
    lo, hi = cfg.hu_window
    data = (np.clip(v.data, lo, hi) - np.float32(lo)) / np.float32(hi - lo)
    return Volume(data=data, spacing=v.spacing, study_id=v.study_id)


@dataclass(frozen=True)
class CropRecord:
    """Offsets needed to re-embed a cropped prediction into the full volume."""

    box: tuple[tuple[int, int], tuple[int, int], tuple[int, int]]
    full_shape: tuple[int, int, int]


def crop_to_lungs(v: Volume, lungs: Mask, margin_voxels: int = 0) -> tuple[Volume, CropRecord]:
    lungs.require_aligned(v)
    box = bounding_box(lungs)
    if margin_voxels:
        box = tuple(
            (max(0, lo - margin_voxels), min(size, hi + margin_voxels))
            for (lo, hi), size in zip(box, v.shape)
        )
    (z0, z1), (y0, y1), (x0, x1) = box
    cropped = Volume(
        data=v.data[z0:z1, y0:y1, x0:x1], spacing=v.spacing, study_id=v.study_id
    )
    return cropped, CropRecord(box=box, full_shape=v.shape)


def crop_mask(m: Mask, crop: CropRecord) -> Mask:
    (z0, z1), (y0, y1), (x0, x1) = crop.box
    return Mask(data=m.data[z0:z1, y0:y1, x0:x1], spacing=m.spacing, kind=m.kind)


def embed_in_full(data: np.ndarray, crop: CropRecord) -> np.ndarray:
    """Place a cropped array back at its original location, zeros outside."""
    out = np.zeros(crop.full_shape, dtype=data.dtype)
    (z0, z1), (y0, y1), (x0, x1) = crop.box
    out[z0:z1, y0:y1, x0:x1] = data
    return out
