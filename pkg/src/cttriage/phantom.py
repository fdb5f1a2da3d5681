"""Synthetic chest phantoms with exact ground truth.

Each phantom is a body ellipsoid (soft tissue, 0 HU) in air (-1000 HU)
containing two lung ellipsoids (-850 HU). Lesions (-400 HU) are blobs grown
voxel-by-voxel around a random interior seed until the requested fraction of
each lung is covered, so the generator can state its severity exactly. HU
levels are chosen so the (-700, 300) threshold window separates lesion from
parenchyma by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleSpec
from .volume import Mask, MaskKind, Volume

MAX_LESION_FRACTION = 0.95  # a blob cannot fill a whole lung


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple[int, int, int] = (8, 32, 32)
    spacing: tuple[float, float, float] = (8.0, 2.0, 2.0)
    lesion_fraction: tuple[float, float] = (0.0, 0.0)  # (left, right)
    hu_air: float = -1000.0
    hu_parenchyma: float = -850.0
    hu_lesion: float = -400.0
    hu_body: float = 0.0
    noise_sigma: float = 30.0
    seed: int = 0
    study_id: str = ""

    def __post_init__(self):
        if min(self.shape) < 2 or int(np.prod(self.shape)) < 16 ** 3 // 256:
            raise ValueError(f"phantom shape {self.shape} too small")
        for f in self.lesion_fraction:
            if not 0.0 <= f <= 1.0:
                raise ValueError(f"lesion fraction {f} outside [0, 1]")
            if f > MAX_LESION_FRACTION:
                raise InfeasibleSpec(
                    f"lesion fraction {f} > {MAX_LESION_FRACTION}: a blob cannot "
                    "cover an entire lung"
                )


@dataclass(frozen=True)
class PhantomSample:
    volume: Volume
    lungs: Mask
    lung_left: Mask
    lung_right: Mask
    lesion: Mask
    lesion_left: Mask
    lesion_right: Mask
    label: int
    severity: float
    per_lung_fractions: tuple[float, float]


def _ellipsoid(shape, center, semiaxes) -> np.ndarray:
    grids = np.ogrid[tuple(slice(0, s) for s in shape)]
    acc = np.zeros(shape, dtype=np.float64)
    for g, c, r in zip(grids, center, semiaxes):
        acc = acc + ((g - c) / r) ** 2
    return acc <= 1.0


def _grow_blob(lung_idx: np.ndarray, target_count: int, rng: np.random.Generator,
               spacing) -> np.ndarray:
    """Indices of the ``target_count`` lung voxels nearest (in mm) to a random
    interior seed; an exact-size approximately round blob."""
    seed = lung_idx[rng.integers(len(lung_idx))]
    deltas = (lung_idx - seed) * np.asarray(spacing)
    dist = np.einsum("ij,ij->i", deltas, deltas)
    order = np.argsort(dist, kind="stable")
    return lung_idx[order[:target_count]]


def generate_phantom(spec: PhantomSpec) -> PhantomSample:
    """Deterministic for a given spec (seed included)."""
    rng = np.random.default_rng(spec.seed)
    S, H, W = spec.shape

    body = _ellipsoid(spec.shape, (S / 2 - 0.5, H / 2 - 0.5, W / 2 - 0.5),
                      (0.52 * S, 0.46 * H, 0.46 * W))
    lung_axes = (0.40 * S, 0.33 * H, 0.17 * W)
    cz, cy = S / 2 - 0.5, H / 2 - 0.5
    # radiological orientation: the patient's right lung sits at small x
    right = _ellipsoid(spec.shape, (cz, cy, 0.28 * W), lung_axes) & body
    left = _ellipsoid(spec.shape, (cz, cy, 0.72 * W - 1), lung_axes) & body
    lungs = left | right

    lesion_masks = []
    fractions = []
    for side_mask, target in zip((left, right), spec.lesion_fraction):
        lesion = np.zeros(spec.shape, dtype=bool)
        count = int(side_mask.sum())
        k = int(round(target * count))
        if k > 0:
            idx = np.argwhere(side_mask)
            chosen = _grow_blob(idx, k, rng, spec.spacing)
            lesion[tuple(chosen.T)] = True
        lesion_masks.append(lesion)
        fractions.append(k / count if count else 0.0)
    lesion_left, lesion_right = lesion_masks
    lesion = lesion_left | lesion_right

    hu = np.full(spec.shape, spec.hu_air, dtype=np.float32)
    hu[body] = spec.hu_body
    hu[lungs] = spec.hu_parenchyma
    hu[lesion] = spec.hu_lesion
    if spec.noise_sigma > 0:
        hu = hu + rng.normal(0.0, spec.noise_sigma, spec.shape).astype(np.float32)

    def mask(arr, kind):
        return Mask(data=arr.astype(np.uint8), spacing=spec.spacing, kind=kind)

    label = int(lesion.any())
    severity = max(fractions)
    return PhantomSample(
        volume=Volume(data=hu, spacing=spec.spacing, study_id=spec.study_id),
        lungs=mask(lungs, MaskKind.LUNGS),
        lung_left=mask(left, MaskKind.LUNG_LEFT),
        lung_right=mask(right, MaskKind.LUNG_RIGHT),
        lesion=mask(lesion, MaskKind.LESION),
        lesion_left=mask(lesion_left, MaskKind.LESION),
        lesion_right=mask(lesion_right, MaskKind.LESION),
        label=label,
        severity=float(severity),
        per_lung_fractions=(float(fractions[0]), float(fractions[1])),
    )


def air_volume(shape=(8, 32, 32), spacing=(8.0, 2.0, 2.0), noise_sigma: float = 30.0,
               seed: int = 0, study_id: str = "") -> Volume:
    """An all-air scan (no body, no lungs); used as a negative control."""
    rng = np.random.default_rng(seed)
    hu = np.full(shape, -1000.0, dtype=np.float32)
    if noise_sigma > 0:
        hu = hu + rng.normal(0.0, noise_sigma, shape).astype(np.float32)
    return Volume(data=hu, spacing=spacing, study_id=study_id)


def phantom_cohort(count: int, lesioned: int, seed: int = 0,
                   shape=(8, 32, 32), spacing=(8.0, 2.0, 2.0),
                   fraction_range=(0.05, 0.5), noise_sigma: float = 30.0,
                   id_prefix: str = "phantom") -> list[PhantomSample]:
    """``lesioned`` phantoms with random per-lung target fractions plus
    healthy ones, deterministically derived from ``seed``."""
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(count):
        if i < lesioned:
            lo, hi = fraction_range
            primary = float(rng.uniform(lo, hi))
            secondary = float(rng.uniform(0.0, primary))
            fractions = (primary, secondary) if rng.integers(2) else (secondary, primary)
        else:
            fractions = (0.0, 0.0)
        samples.append(generate_phantom(PhantomSpec(
            shape=shape, spacing=spacing, lesion_fraction=fractions,
            noise_sigma=noise_sigma, seed=int(rng.integers(2 ** 31)),
            study_id=f"{id_prefix}-{i:03d}",
        )))
    return samples
