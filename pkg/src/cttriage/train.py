"""Training harness: the weighted two-head loss, stratified batch sampling,
the optimization loop with checkpoint-on-best-validation, and loss/metric
logging. Mixed supervision is the norm - a sample may carry a lesion mask,
a study label, or both, and absent targets simply contribute nothing.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import Divergence, NoTargets, UnbalancedDatasetWarning
from .metrics import LabeledScore, dice, roc_auc
from .nets import Model, pad_to_multiple, unpad

BCE_EPS = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    batches_total: int = 1000
    batch_size: int = 5
    optimizer: str = "adam"
    lr_schedule: tuple[tuple[int, float], ...] = ((0, 3e-4),)
    cls_loss_weight: float = 0.1
    balance_sampling: bool = True
    balance_mode: str = "label"  # "label" or "supervision"
    seed: int = 0
    val_every: int = 100

    def __post_init__(self):
        if self.cls_loss_weight < 0:
            raise ValueError("cls_loss_weight must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        schedule = tuple((int(b), float(lr)) for b, lr in self.lr_schedule)
        if not schedule or any(lr <= 0 for _, lr in schedule):
            raise ValueError("lr_schedule needs positive learning rates")
        if any(schedule[i][0] >= schedule[i + 1][0] for i in range(len(schedule) - 1)):
            raise ValueError("lr_schedule batch indices must increase")
        object.__setattr__(self, "lr_schedule", schedule)

    def lr_at(self, batch_index: int) -> float:
        lr = self.lr_schedule[0][1]
        for start, value in self.lr_schedule:
            if batch_index >= start:
                lr = value
        return lr

    def to_dict(self) -> dict:
        return {
            "batches_total": self.batches_total,
            "batch_size": self.batch_size,
            "optimizer": self.optimizer,
            "lr_schedule": [list(x) for x in self.lr_schedule],
            "cls_loss_weight": self.cls_loss_weight,
            "balance_sampling": self.balance_sampling,
            "balance_mode": self.balance_mode,
            "seed": self.seed,
            "val_every": self.val_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lr_schedule" in d:
            d["lr_schedule"] = tuple(tuple(x) for x in d["lr_schedule"])
        return cls(**d)


@dataclass
class Sample:
    """One training study: normalized volume plus whatever supervision exists."""

    volume: np.ndarray  # (S, H, W), already preprocessed to [0, 1]
    mask: np.ndarray | None = None  # (S, H, W) binary lesion/lung target
    label: int | None = None  # study-level class
    source: str = ""

    def __post_init__(self):
        if self.mask is None and self.label is None:
            raise NoTargets(f"sample {self.source!r} has neither mask nor label")


def multitask_loss(seg_pred, seg_target, cls_pred, cls_target,
                   cls_weight: float = 0.1):
    """Weighted sum of the two binary cross-entropies.

    Arguments are aligned per-sample lists (a ``None`` entry means the target
    is absent for that sample); predictions are probabilities. The
    segmentation term is the mean over mask-bearing samples of each sample's
    mean voxel BCE; the classification term is the mean BCE over labeled
    samples, multiplied by ``cls_weight``. Probabilities are clamped to
    [1e-7, 1 - 1e-7] before the logs.
    """
    def as_list(x):
        return x if isinstance(x, (list, tuple)) else [x]

    seg_pred, seg_target = as_list(seg_pred), as_list(seg_target)
    cls_pred, cls_target = as_list(cls_pred), as_list(cls_target)

    def bce(p, y):
        p = torch.clamp(torch.as_tensor(p), BCE_EPS, 1.0 - BCE_EPS)
        y = torch.as_tensor(y, dtype=p.dtype)
        return -(y * torch.log(p) + (1.0 - y) * torch.log1p(-p)).mean()

    seg_terms = [bce(p, y) for p, y in zip(seg_pred, seg_target)
                 if p is not None and y is not None]
    cls_terms = [bce(p, y) for p, y in zip(cls_pred, cls_target)
                 if p is not None and y is not None]
    if not seg_terms and not cls_terms:
        raise NoTargets("no segmentation masks and no labels in batch")

    total = None
    if seg_terms:
        total = torch.stack(seg_terms).mean()
    if cls_terms:
        # weight 0 keeps the term in the graph with exactly-zero gradients
        cls_term = cls_weight * torch.stack(cls_terms).mean()
        total = cls_term if total is None else total + cls_term
    return total


def _stratum(sample: Sample, mode: str) -> int:
    if mode == "supervision":
        return 0 if sample.mask is not None else 1
    if mode == "label":
        return int(sample.label == 1)
    raise ValueError(f"unknown balance mode {mode!r}")


def balanced_batches(dataset: list[Sample], batch_size: int, mode: str = "label",
                     seed: int = 0, batches: int | None = None):
    """Yield batches whose two stratum counts differ by at most one.

    The minority stratum is sampled with replacement. If a stratum is empty
    the generator warns once and falls back to plain shuffling. Deterministic
    for a given seed; yields forever unless ``batches`` is given.
    """
    rng = np.random.default_rng(seed)
    strata = [[s for s in dataset if _stratum(s, mode) == 0],
              [s for s in dataset if _stratum(s, mode) == 1]]
    balanced = all(strata)
    if not balanced:
        warnings.warn(
            f"balance mode {mode!r}: a stratum is empty, falling back to plain "
            "shuffling", UnbalancedDatasetWarning, stacklevel=2)

    produced = 0
    while batches is None or produced < batches:
        if balanced:
            n0 = batch_size // 2
            if batch_size % 2:
                n0 += int(rng.integers(2))
            batch = []
            for stratum, n in zip(strata, (n0, batch_size - n0)):
                replace = n > len(stratum)
                picks = rng.choice(len(stratum), size=n, replace=replace)
                batch.extend(stratum[i] for i in picks)
        else:
            picks = rng.choice(len(dataset), size=batch_size,
                               replace=batch_size > len(dataset))
            batch = [dataset[i] for i in picks]
        produced += 1
        yield batch


@dataclass
class TrainingLog:
    batch_loss: list[float] = field(default_factory=list)
    validation: list[dict] = field(default_factory=list)  # {batch, metric, loss}
    best_batch: int = -1
    best_metric: float = float("-inf")
    val_metric_name: str = ""


def _forward_sample(model: Model, sample: Sample):
    """Run one study; returns (seg probs or None, cls prob or None)."""
    x = torch.from_numpy(np.ascontiguousarray(sample.volume, dtype=np.float32))
    x = x.unsqueeze(1)
    x, pads = pad_to_multiple(x, model.stride)
    if model.spec.kind == "multitask":
        seg_logits, cls_logit = model.module(x)
        seg = torch.sigmoid(unpad(seg_logits, pads)).squeeze(1)
        return seg, torch.sigmoid(cls_logit)
    if model.spec.kind == "resnet_cls":
        return None, torch.sigmoid(model.module(x))
    seg_logits = model.module(x)
    return torch.sigmoid(unpad(seg_logits, pads)).squeeze(1), None


def _validate(model: Model, val_set: list[Sample]) -> tuple[str, float]:
    """Whole-study validation: classification ROC-AUC when the set carries
    both label classes, otherwise mean Dice of the segmentation head."""
    model.module.eval()
    labels = [s.label for s in val_set if s.label is not None]
    use_auc = (model.spec.kind in ("multitask", "resnet_cls")
               and len(set(labels)) == 2)
    if use_auc:
        scored = []
        for i, s in enumerate(val_set):
            if s.label is None:
                continue
            if model.spec.kind == "multitask":
                _, p = model.predict_multitask(s.volume)
            else:
                p = model.predict_proba(s.volume)
            group = "COVID" if s.label == 1 else "NORMAL"
            scored.append(LabeledScore(f"val-{i}", p, group))
        return "roc_auc", roc_auc(scored, negatives=("NORMAL",))
    dices = []
    for s in val_set:
        if s.mask is None:
            continue
        if model.spec.kind == "multitask":
            probs, _ = model.predict_multitask(s.volume)
        else:
            probs = model.predict_volume(s.volume)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            dices.append(dice(probs >= 0.5, s.mask != 0))
    if not dices:
        raise NoTargets("validation set has neither usable labels nor masks")
    return "dice", float(np.mean(dices))


def train(model: Model, dataset: list[Sample], val_set: list[Sample],
          cfg: TrainConfig) -> tuple[dict[str, np.ndarray], TrainingLog]:
    """Optimize ``model`` in place; returns (best-validation weights, log).

    The model is left loaded with the best checkpoint. Reproducible for a
    given config seed.
    """
    torch.manual_seed(cfg.seed)
    params = list(model.module.parameters())
    if cfg.optimizer == "adam":
        opt = torch.optim.Adam(params, lr=cfg.lr_at(0))
    else:
        opt = torch.optim.SGD(params, lr=cfg.lr_at(0))

    mode = cfg.balance_mode if cfg.balance_sampling else None
    if mode is not None:
        batch_iter = balanced_batches(dataset, cfg.batch_size, mode=mode,
                                      seed=cfg.seed, batches=cfg.batches_total)
    else:
        rng = np.random.default_rng(cfg.seed)
        batch_iter = (
            [dataset[i] for i in rng.choice(len(dataset), size=cfg.batch_size,
                                            replace=cfg.batch_size > len(dataset))]
            for _ in range(cfg.batches_total)
        )

    log = TrainingLog()
    best_state: dict[str, torch.Tensor] | None = None
    for batch_index, batch in enumerate(batch_iter):
        for group in opt.param_groups:
            group["lr"] = cfg.lr_at(batch_index)
        model.module.train()
        seg_p, seg_t, cls_p, cls_t = [], [], [], []
        for sample in batch:
            seg, cls = _forward_sample(model, sample)
            seg_p.append(seg if sample.mask is not None else None)
            seg_t.append(torch.from_numpy(sample.mask.astype(np.float32))
                         if sample.mask is not None else None)
            cls_p.append(cls if sample.label is not None else None)
            cls_t.append(float(sample.label) if sample.label is not None else None)
        loss = multitask_loss(seg_p, seg_t, cls_p, cls_t, cfg.cls_loss_weight)
        if not torch.isfinite(loss):
            raise Divergence(
                f"non-finite loss at batch {batch_index} "
                f"(lr={cfg.lr_at(batch_index)}, batch size={len(batch)})"
            )
        opt.zero_grad()
        loss.backward()
        opt.step()
        log.batch_loss.append(float(loss))

        last = batch_index == cfg.batches_total - 1
        if (batch_index + 1) % cfg.val_every == 0 or last:
            name, metric = _validate(model, val_set)
            log.val_metric_name = name
            log.validation.append({
                "batch": batch_index,
                "metric": metric,
                "loss": float(np.mean(log.batch_loss[-cfg.val_every:])),
            })
            # ties keep the newest weights: segmentation keeps improving
            # after the classification metric saturates
            if metric >= log.best_metric:
                log.best_metric = metric
                log.best_batch = batch_index
                best_state = {k: v.detach().clone()
                              for k, v in model.module.state_dict().items()}

    if best_state is not None:
        model.module.load_state_dict(best_state)
    model.module.eval()
    return model.state_arrays(), log
