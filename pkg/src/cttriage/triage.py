"""Triage outputs: severity score, CT grade, ranked worklists, and the
end-to-end per-study pipeline (preprocess, lung segmentation and split,
lung-box crop, lesion inference, re-embedding, scoring).

The severity score follows the adopted clinical protocol: the lesion-to-lung
volume ratio is computed for each lung separately and the maximum of the two
is the study severity; grades CT-0..CT-4 quantize it in 25% steps.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import Misalignment, OutOfRange, ZeroVolumeLungWarning
from .lungs import LungSplit, segment_lungs, split_lungs
from .nets import Model
from .preprocess import (
    PreprocessConfig,
    crop_mask,
    crop_to_lungs,
    embed_in_full,
    normalize_intensity,
    resample_axial,
    resize_mask_inplane,
)
from .threshold import ThresholdConfig, threshold_segment
from .volume import Mask, MaskKind, Volume


@dataclass(frozen=True)
class TriageResult:
    study_id: str
    covid_probability: float
    severity: float
    ct_grade: int
    per_lung_fractions: tuple[float, float]  # (left, right)
    method: str = "multitask"
    wall_time_ms: float = 0.0
    ingested_at: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.covid_probability <= 1.0:
            raise OutOfRange(f"covid_probability {self.covid_probability}")
        if not 0.0 <= self.severity <= 1.0:
            raise OutOfRange(f"severity {self.severity}")
        if self.ct_grade != grade_ct(self.severity):
            raise ValueError(
                f"ct_grade {self.ct_grade} inconsistent with severity {self.severity}")
        if abs(self.severity - max(self.per_lung_fractions)) > 1e-9:
            raise ValueError("severity must equal the maximal per-lung fraction")

    def to_dict(self) -> dict:
        return {
            "study_id": self.study_id,
            "covid_probability": self.covid_probability,
            "severity": self.severity,
            "ct_grade": self.ct_grade,
            "per_lung_fractions": {
                "left": self.per_lung_fractions[0],
                "right": self.per_lung_fractions[1],
            },
            "method": self.method,
            "wall_time_ms": self.wall_time_ms,
            "ingested_at": self.ingested_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TriageResult":
        fractions = d["per_lung_fractions"]
        if isinstance(fractions, dict):
            fractions = (fractions["left"], fractions["right"])
        return cls(
            study_id=d["study_id"],
            covid_probability=d["covid_probability"],
            severity=d["severity"],
            ct_grade=d["ct_grade"],
            per_lung_fractions=tuple(fractions),
            method=d.get("method", "multitask"),
            wall_time_ms=d.get("wall_time_ms", 0.0),
            ingested_at=d.get("ingested_at"),
        )


def severity_score(lesion: Mask, split: LungSplit) -> tuple[float, tuple[float, float]]:
    """(severity, (left fraction, right fraction)).

    Each fraction is |lesion n lung side| / |lung side| in voxel counts
    (spacing cancels); lesion voxels outside the lungs do not count. A lung
    with zero voxels contributes fraction 0 with a warning.
    """
    fractions = []
    for side in (split.left, split.right):
        if lesion.shape != side.shape:
            raise Misalignment(f"lesion {lesion.shape} vs lung {side.shape}")
        denom = side.count
        if denom == 0:
            warnings.warn("zero-volume lung contributes fraction 0",
                          ZeroVolumeLungWarning, stacklevel=2)
            fractions.append(0.0)
            continue
        inter = int(np.logical_and(lesion.data, side.data).sum())
        fractions.append(inter / denom)
    severity = max(fractions)
    return severity, (fractions[0], fractions[1])


def grade_ct(severity: float) -> int:
    """CT-0..CT-4 in 25% steps: exactly 0 -> 0, (0, 0.25] -> 1,
    (0.25, 0.5] -> 2, (0.5, 0.75] -> 3, (0.75, 1] -> 4."""
    if not (np.isfinite(severity) and 0.0 <= severity <= 1.0):
        raise OutOfRange(f"severity {severity} outside [0, 1]")
    if severity == 0.0:
        return 0
    for grade, upper in ((1, 0.25), (2, 0.5), (3, 0.75)):
        if severity <= upper:
            return grade
    return 4


RANK_MODES = ("identification", "severity")


def rank_studies(results: list[TriageResult], mode: str) -> list[TriageResult]:
    """Deterministic total order: score descending, ties by ingestion
    timestamp ascending (oldest first), then study_id."""
    if mode not in RANK_MODES:
        raise ValueError(f"mode must be one of {RANK_MODES}, got {mode!r}")

    def key(r: TriageResult):
        score = r.covid_probability if mode == "identification" else r.severity
        ts = r.ingested_at if r.ingested_at is not None else math.inf
        return (-score, ts, r.study_id)

    return sorted(results, key=key)


@dataclass
class TriageModels:
    lungs: Model
    multitask: Model | None = None


def run_pipeline(v: Volume, models: TriageModels,
                 preprocess_cfg: PreprocessConfig = PreprocessConfig(),
                 method: str = "multitask",
                 threshold_cfg: ThresholdConfig = ThresholdConfig(),
                 ) -> tuple[TriageResult, Mask]:
    """Score one study; returns the result and the lesion mask re-embedded
    into the source-image geometry (for overlays).

    ``method`` selects the lesion stage: ``multitask`` (joint segmentation +
    identification) or ``threshold`` (HU baseline; its identification score
    is the severity itself, since that method has no classifier).
    """
    t0 = time.perf_counter()
    resampled = resample_axial(v, preprocess_cfg)
    normalized = normalize_intensity(resampled, preprocess_cfg)
    lungs = segment_lungs(normalized, models.lungs)
    split = split_lungs(lungs)
    cropped, crop = crop_to_lungs(normalized, lungs)

    if method == "multitask":
        if models.multitask is None:
            raise ValueError("multitask model not loaded")
        seg_probs, covid_probability = models.multitask.predict_multitask(cropped.data)
        lesion_small = (seg_probs >= 0.5).astype(np.uint8)
    elif method == "threshold":
        cropped_hu = Volume(
            data=resampled.data[tuple(slice(lo, hi) for lo, hi in crop.box)],
            spacing=resampled.spacing, study_id=v.study_id)
        lesion_small = threshold_segment(
            cropped_hu, crop_mask(lungs, crop), threshold_cfg).data
        covid_probability = None  # filled from severity below
    else:
        raise ValueError(f"unknown method {method!r}")

    lesion_resampled = Mask(data=embed_in_full(lesion_small, crop),
                            spacing=resampled.spacing, kind=MaskKind.LESION)
    severity, fractions = severity_score(lesion_resampled, split)
    if covid_probability is None:
        covid_probability = severity

    lesion_original = resize_mask_inplane(
        lesion_resampled, (v.shape[1], v.shape[2]), v.spacing)
    wall_ms = (time.perf_counter() - t0) * 1000.0
    result = TriageResult(
        study_id=v.study_id,
        covid_probability=float(covid_probability),
        severity=float(severity),
        ct_grade=grade_ct(severity),
        per_lung_fractions=fractions,
        method=method,
        wall_time_ms=wall_ms,
    )
    return result, lesion_original


def run_batch(volumes: list[Volume], models: TriageModels, **kwargs):
    """Score many studies; per-study errors are attached, not fatal.

    Returns (results keyed by study_id, lesion masks keyed by study_id,
    errors keyed by study_id).
    """
    results: dict[str, TriageResult] = {}
    masks: dict[str, Mask] = {}
    failures: dict[str, str] = {}
    for v in volumes:
        try:
            result, lesion = run_pipeline(v, models, **kwargs)
        except Exception as e:  # noqa: BLE001 - stage errors stay per-study
            failures[v.study_id] = f"{type(e).__name__}: {e}"
            continue
        results[v.study_id] = result
        masks[v.study_id] = lesion
    return results, masks, failures
