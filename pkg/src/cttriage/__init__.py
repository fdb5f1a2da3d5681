"""CT triage: joint COVID-19 identification and severity quantification
with a single multitask network, plus a prioritized radiology worklist."""

__version__ = "0.1.0"

from .volume import Mask, MaskKind, Volume, bounding_box, load_mask, load_volume, save_mask, save_volume
from .preprocess import PreprocessConfig, crop_to_lungs, normalize_intensity, resample_axial
from .threshold import ThresholdConfig, connected_components_3d, threshold_segment
from .lungs import LungSplit, segment_lungs, split_lungs
from .nets import Model, NetworkSpec, build, load_model, load_weights, pyramid_pool, save_weights
from .phantom import PhantomSpec, air_volume, generate_phantom, phantom_cohort
from .train import Sample, TrainConfig, balanced_batches, multitask_loss, train
from .metrics import LabeledScore, dice, evaluate_suite, roc_auc, spearman_rho
from .triage import TriageModels, TriageResult, grade_ct, rank_studies, run_pipeline, severity_score

__all__ = [
    "Volume", "Mask", "MaskKind", "load_volume", "save_volume", "load_mask",
    "save_mask", "bounding_box",
    "PreprocessConfig", "resample_axial", "normalize_intensity", "crop_to_lungs",
    "ThresholdConfig", "threshold_segment", "connected_components_3d",
    "LungSplit", "segment_lungs", "split_lungs",
    "NetworkSpec", "Model", "build", "pyramid_pool", "save_weights",
    "load_weights", "load_model",
    "PhantomSpec", "generate_phantom", "phantom_cohort", "air_volume",
    "TrainConfig", "Sample", "multitask_loss", "balanced_batches", "train",
    "LabeledScore", "roc_auc", "spearman_rho", "dice", "evaluate_suite",
    "TriageResult", "TriageModels", "severity_score", "grade_ct",
    "rank_studies", "run_pipeline",
]
