"""Whole-lung segmentation and the left/right split.

The lung network is a slice-wise U-Net producing a single binary mask for
both lungs. The split clusters the physical (mm) coordinates of the lung
voxels with k-means (k=2, Euclidean distance, deterministic initialization
at the centroids of the two halves of the mask's x-extent).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSplitWarning, EmptyMask
from .nets import Model
from .volume import Mask, MaskKind, Volume, bounding_box

KMEANS_TOL_MM = 1e-6
KMEANS_MAX_ITER = 100
DEGENERATE_CLUSTER_FRACTION = 0.01


@dataclass(frozen=True)
class LungSplit:
    left: Mask
    right: Mask
    volume_left_mm3: float
    volume_right_mm3: float


def segment_lungs(v: Volume, net: Model) -> Mask:
    """Binary lung mask (pathological tissue included) from per-voxel
    sigmoid probabilities thresholded at 0.5; ``v`` must be preprocessed."""
    probs = net.predict_volume(v.data)
    return Mask(data=(probs >= 0.5).astype(np.uint8), spacing=v.spacing,
                kind=MaskKind.LUNGS)


def _lloyd(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Plain k-means iterations; returns final assignment. Ties go to the
    lower cluster index, so the result is traversal-order independent."""
    for _ in range(KMEANS_MAX_ITER):
        d0 = ((points - centroids[0]) ** 2).sum(axis=1)
        d1 = ((points - centroids[1]) ** 2).sum(axis=1)
        assign = (d1 < d0).astype(np.int8)
        new = centroids.copy()
        for c in (0, 1):
            sel = points[assign == c]
            if len(sel):
                new[c] = sel.mean(axis=0)
        if np.abs(new - centroids).max() < KMEANS_TOL_MM:
            centroids = new
            break
        centroids = new
    d0 = ((points - centroids[0]) ** 2).sum(axis=1)
    d1 = ((points - centroids[1]) ** 2).sum(axis=1)
    return (d1 < d0).astype(np.int8)


def split_lungs(lungs: Mask, spacing: tuple[float, float, float] | None = None) -> LungSplit:
    """Partition the lung mask into two sides by k-means over mm coordinates.

    The cluster with the smaller mean x (column) coordinate is the patient's
    right lung in radiological orientation. Deterministic; a cluster taking
    under 1% of the voxels is flagged, not fatal.
    """
    if spacing is None:
        spacing = lungs.spacing
    if lungs.count == 0:
        raise EmptyMask("cannot split an empty lung mask")

    idx = np.argwhere(lungs.data)
    points = idx.astype(np.float64) * np.asarray(spacing, dtype=np.float64)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # nonempty mask: box is well defined
        (_, _), (_, _), (x0, x1) = bounding_box(lungs)
    mid_mm = (x0 + x1 - 1) / 2.0 * spacing[2]
    lower = points[points[:, 2] <= mid_mm]
    upper = points[points[:, 2] > mid_mm]
    if len(lower) and len(upper):
        centroids = np.stack([lower.mean(axis=0), upper.mean(axis=0)])
    else:
        # everything on one side of the midline: seed at the extent quartiles
        centroids = np.stack([points.mean(axis=0)] * 2)
        span = (x1 - x0) * spacing[2]
        centroids[0, 2] = x0 * spacing[2] + 0.25 * span
        centroids[1, 2] = x0 * spacing[2] + 0.75 * span

    assign = _lloyd(points, centroids)
    counts = np.bincount(assign, minlength=2)
    if counts.min() < DEGENERATE_CLUSTER_FRACTION * counts.sum():
        warnings.warn(
            f"degenerate lung split: cluster sizes {counts.tolist()}",
            DegenerateSplitWarning, stacklevel=2)

    mean_x = [points[assign == c, 2].mean() if counts[c] else np.inf for c in (0, 1)]
    right_cluster = int(np.argmin(mean_x))

    masks = {}
    for side, cluster in (("right", right_cluster), ("left", 1 - right_cluster)):
        m = np.zeros(lungs.shape, dtype=np.uint8)
        sel = idx[assign == cluster]
        m[sel[:, 0], sel[:, 1], sel[:, 2]] = 1
        masks[side] = m

    voxel_mm3 = float(np.prod(spacing))
    return LungSplit(
        left=Mask(data=masks["left"], spacing=spacing, kind=MaskKind.LUNG_LEFT),
        right=Mask(data=masks["right"], spacing=spacing, kind=MaskKind.LUNG_RIGHT),
        volume_left_mm3=float(masks["left"].sum()) * voxel_mm3,
        volume_right_mm3=float(masks["right"].sum()) * voxel_mm3,
    )
