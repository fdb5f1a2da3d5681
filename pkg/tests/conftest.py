"""Shared fixtures: the desk-scale phantom cohort and the networks trained
on it. Training runs once per session and feeds the lung-segmentation,
pipeline, service, and acceptance tests."""

import time
import warnings
from dataclasses import dataclass

import numpy as np
import pytest

import cttriage as ct
from cttriage.nets import NetworkSpec, build
from cttriage.preprocess import crop_mask, crop_to_lungs
from cttriage.train import Sample, TrainConfig, train
from cttriage.triage import TriageModels

COHORT_SEED = 42
TRAIN_LESIONED = 20
TRAIN_HEALTHY = 20
HELDOUT_LESIONED = 10
HELDOUT_HEALTHY = 10


@dataclass
class DeskSetup:
    train_phantoms: list
    heldout_phantoms: list
    models: TriageModels
    preprocess: ct.PreprocessConfig
    train_seconds: float


def preprocess_phantom(sample, cfg):
    vol = ct.resample_axial(sample.volume, cfg)
    return ct.normalize_intensity(vol, cfg)


def lesion_sample(s, cfg) -> Sample:
    """Lesion nets train on lung-box-cropped inputs, matching inference."""
    vol = preprocess_phantom(s, cfg)
    cropped, crop = crop_to_lungs(vol, s.lungs)
    mask = crop_mask(s.lesion, crop).data.astype(np.float32)
    return Sample(volume=cropped.data, mask=mask, label=s.label,
                  source=s.volume.study_id)


def lungs_sample(s, cfg) -> Sample:
    vol = preprocess_phantom(s, cfg)
    return Sample(volume=vol.data, mask=s.lungs.data.astype(np.float32),
                  label=s.label, source=s.volume.study_id)


@pytest.fixture(scope="session")
def desk_setup() -> DeskSetup:
    total = TRAIN_LESIONED + TRAIN_HEALTHY + HELDOUT_LESIONED + HELDOUT_HEALTHY
    lesioned = TRAIN_LESIONED + HELDOUT_LESIONED
    cohort = ct.phantom_cohort(total, lesioned, seed=COHORT_SEED)
    train_ph = cohort[:TRAIN_LESIONED] + cohort[lesioned:lesioned + TRAIN_HEALTHY]
    heldout = (cohort[TRAIN_LESIONED:lesioned]
               + cohort[lesioned + TRAIN_HEALTHY:])
    cfg = ct.PreprocessConfig()

    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lung_model = build(NetworkSpec(kind="lung_unet2d", levels=3,
                                       base_channels=8, block="plain"), seed=3)
        lung_set = [lungs_sample(s, cfg) for s in train_ph]
        # air-only scans with empty masks teach the net that "no lungs"
        # is a valid answer
        for i in range(5):
            vol = ct.air_volume(seed=1000 + i)
            pre = ct.normalize_intensity(ct.resample_axial(vol, cfg), cfg)
            lung_set.append(Sample(volume=pre.data,
                                   mask=np.zeros(pre.shape, dtype=np.float32),
                                   label=0, source=f"air-{i}"))
        train(lung_model, lung_set, lung_set,
              TrainConfig(batches_total=200, batch_size=4,
                          lr_schedule=((0, 3e-3),), balance_sampling=False,
                          seed=3, val_every=50))

        multitask = build(NetworkSpec(kind="multitask", levels=3, base_channels=8,
                                      fc_hidden=16, attach="spatial:1"), seed=7)
        lesion_set = [lesion_sample(s, cfg) for s in train_ph]
        train(multitask, lesion_set, lesion_set,
              TrainConfig(batches_total=500, batch_size=4,
                          lr_schedule=((0, 3e-3), (350, 1e-3)),
                          cls_loss_weight=0.1, balance_mode="label",
                          seed=7, val_every=50))
    elapsed = time.perf_counter() - t0

    return DeskSetup(
        train_phantoms=train_ph,
        heldout_phantoms=heldout,
        models=TriageModels(lungs=lung_model, multitask=multitask),
        preprocess=cfg,
        train_seconds=elapsed,
    )


@pytest.fixture(scope="session")
def trained_models(desk_setup) -> TriageModels:
    return desk_setup.models
