"""Non-learned baseline lesion segmentation.

Three steps: HU window inside the lungs, Gaussian smoothing of the binary
mask re-binarized at 0.5, and removal of small 3D connected components.
Default constants: HU window (-700, 300), sigma 4 voxels, minimum component
volume 0.1% of the lung mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyMask
from .volume import Mask, MaskKind, Volume

# Blur discretization convention: isotropic sigma in voxel units, kernel
# radius int(4*sigma + 0.5), symmetric ("reflect") boundary handling.
GAUSS_TRUNCATE = 4.0


@dataclass(frozen=True)
class ThresholdConfig:
    hu_min: float = -700.0
    hu_max: float = 300.0
    sigma: float = 4.0
    v_min_fraction: float = 0.001

    def __post_init__(self):
        if not self.hu_min < self.hu_max:
            raise ValueError(f"hu_min must be < hu_max, got {(self.hu_min, self.hu_max)}")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not 0 <= self.v_min_fraction < 1:
            raise ValueError("v_min_fraction must be in [0, 1)")


def connected_components_3d(m: Mask | np.ndarray, connectivity: int = 26):
    """Label 3D connected components; returns (labels, sizes).

    ``sizes[k]`` is the voxel count of component ``k+1``. Labeling is
    deterministic (raster order of first contact).
    """
    data = m.data if isinstance(m, Mask) else np.asarray(m)
    if connectivity == 26:
        structure = np.ones((3, 3, 3), dtype=bool)
    elif connectivity == 6:
        structure = ndimage.generate_binary_structure(3, 1)
    else:
        raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")
    labels, n = ndimage.label(data != 0, structure=structure)
    sizes = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    return labels, sizes


def blur_binary(mask: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian blur of a {0,1} field under the module's blur convention."""
    return ndimage.gaussian_filter(
        mask.astype(np.float64), sigma=sigma, mode="reflect", truncate=GAUSS_TRUNCATE
    )


def threshold_segment(v: Volume, lungs: Mask, cfg: ThresholdConfig = ThresholdConfig(),
                      connectivity: int = 26) -> Mask:
    """Segment lesions by thresholding; ``v`` must be in original HU.

    Step 1: voxels with hu_min <= HU <= hu_max inside the lungs.
    Step 2: Gaussian blur (sigma, voxel units) of the binary mask, keep > 0.5.
    Step 3: drop 26-connected components smaller than
            v_min_fraction * (lung voxel count).
    """
    lungs.require_aligned(v)
    lung_count = lungs.count
    if lung_count == 0:
        raise EmptyMask("lungs mask is empty")

    inside = (v.data >= cfg.hu_min) & (v.data <= cfg.hu_max) & (lungs.data > 0)
    smoothed = blur_binary(inside, cfg.sigma) > 0.5

    labels, sizes = connected_components_3d(smoothed, connectivity=connectivity)
    v_min = cfg.v_min_fraction * lung_count
    keep = np.flatnonzero(sizes >= v_min) + 1
    out = np.isin(labels, keep) if keep.size else np.zeros_like(smoothed)
    return Mask(data=out.astype(np.uint8), spacing=v.spacing, kind=MaskKind.LESION)
