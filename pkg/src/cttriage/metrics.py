"""Evaluation metrics: subgroup ROC-AUC, Spearman's rank correlation, Dice.

ROC-AUC uses the Mann-Whitney form with half credit for ties; rank vectors
use average ranks after a descending sort. A full study-set comparison is
assembled by :func:`evaluate_suite` into the standard report layout (four
ROC-AUC subgroup columns, Spearman's rho and mean Dice restricted to the
positive class).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstantVector, DegenerateSample, EmptyDiceWarning, ShapeMismatch
from .volume import Mask

GROUPS = ("COVID", "NORMAL", "BACTERIAL_PNEUMONIA", "NODULES")

REPORT_COLUMNS = (
    "Method",
    "ROC-AUC vs All others",
    "ROC-AUC vs Normal",
    "ROC-AUC vs Bac. Pneum.",
    "ROC-AUC vs Nodules",
    "Spearman's rho",
    "Dice Score",
)

_SUBGROUPS = {
    "ROC-AUC vs All others": ("NORMAL", "BACTERIAL_PNEUMONIA", "NODULES"),
    "ROC-AUC vs Normal": ("NORMAL",),
    "ROC-AUC vs Bac. Pneum.": ("BACTERIAL_PNEUMONIA",),
    "ROC-AUC vs Nodules": ("NODULES",),
}


@dataclass(frozen=True)
class LabeledScore:
    study_id: str
    score: float
    group: str

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError(f"score for {self.study_id} is not finite")
        if self.group not in GROUPS:
            raise ValueError(f"unknown group {self.group!r}")


def rank_descending(values) -> np.ndarray:
    """Average ranks (1-based) of values sorted in descending order;
    tied values share the mean of their rank span."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(-v, kind="stable")
    ranks = np.empty(len(v), dtype=np.float64)
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def roc_auc(scores: list[LabeledScore], positive: str = "COVID",
            negatives: tuple[str, ...] | None = None) -> float:
    """P(score_pos > score_neg) + 0.5 * P(equal) over all positive/negative
    pairs, computed via average ranks."""
    if negatives is None:
        negatives = tuple(g for g in GROUPS if g != positive)
    pos = [s.score for s in scores if s.group == positive]
    neg = [s.score for s in scores if s.group in negatives]
    if not pos or not neg:
        raise DegenerateSample(
            f"need at least one {positive} and one of {negatives}, "
            f"got {len(pos)} / {len(neg)}"
        )
    ranks = rank_descending(np.concatenate([pos, neg]))
    # descending ranks: smaller rank = larger score, so invert the rank-sum
    n_pos, n_neg = len(pos), len(neg)
    pos_rank_sum = float(ranks[:n_pos].sum())
    u = n_pos * (n_pos + n_neg + 1) - pos_rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def spearman_rho(y_true, y_pred) -> float:
    """Pearson correlation of the two average-rank vectors."""
    a = np.asarray(y_true, dtype=np.float64)
    b = np.asarray(y_pred, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeMismatch(f"shapes {a.shape} vs {b.shape}")
    if len(a) < 2:
        raise ValueError("need at least two observations")
    ra, rb = rank_descending(a), rank_descending(b)
    sa, sb = ra.std(), rb.std()
    if sa == 0 or sb == 0:
        raise ConstantVector("rank correlation undefined for a constant vector")
    cov = ((ra - ra.mean()) * (rb - rb.mean())).mean()
    return float(cov / (sa * sb))


def dice(a: Mask | np.ndarray, b: Mask | np.ndarray) -> float:
    """2|a n b| / (|a| + |b|); two empty masks give 1.0 (flagged)."""
    da = (a.data if isinstance(a, Mask) else np.asarray(a)) != 0
    db = (b.data if isinstance(b, Mask) else np.asarray(b)) != 0
    if da.shape != db.shape:
        raise ShapeMismatch(f"shapes {da.shape} vs {db.shape}")
    na, nb = int(da.sum()), int(db.sum())
    if na + nb == 0:
        warnings.warn("both masks empty: Dice = 1.0 by convention", EmptyDiceWarning,
                      stacklevel=2)
        return 1.0
    inter = int((da & db).sum())
    return 2.0 * inter / (na + nb)


# --- full comparison suite ---

@dataclass
class StudyTruth:
    study_id: str
    group: str
    severity: float | None = None
    lesion_mask: Mask | None = None


@dataclass
class StudyPrediction:
    study_id: str
    score: float  # ranking index for identification
    severity: float | None = None
    lesion_mask: Mask | None = None


@dataclass
class ReportRow:
    method: str
    values: dict  # column name -> (mean, std) or None


@dataclass
class Report:
    rows: list[ReportRow]
    missing: list[str] = field(default_factory=list)

    def to_records(self) -> list[dict]:
        records = []
        for row in self.rows:
            rec: dict = {"Method": row.method}
            for col in REPORT_COLUMNS[1:]:
                cell = row.values.get(col)
                if cell is None:
                    rec[col] = None
                else:
                    mean, std = cell
                    rec[col] = {"mean": mean, "std": std}
            records.append(rec)
        return records

    def to_text(self) -> str:
        def fmt(cell):
            if cell is None:
                return "n/a"
            mean, std = cell
            return f"{mean:.2f} ± {std:.2f}"

        widths = [max(len(c), 12) for c in REPORT_COLUMNS]
        widths[0] = max([len(r.method) for r in self.rows] + [len("Method")])
        lines = ["  ".join(c.ljust(w) for c, w in zip(REPORT_COLUMNS, widths))]
        for row in self.rows:
            cells = [row.method.ljust(widths[0])]
            for col, w in zip(REPORT_COLUMNS[1:], widths[1:]):
                cells.append(fmt(row.values.get(col)).ljust(w))
            lines.append("  ".join(cells))
        return "\n".join(lines)


def _evaluate_one(predictions: list[StudyPrediction],
                  truth: dict[str, StudyTruth], missing: list[str]) -> dict:
    by_id = {p.study_id: p for p in predictions}
    scored = []
    for sid, t in truth.items():
        p = by_id.get(sid)
        if p is None:
            missing.append(sid)
            continue
        scored.append((t, p))

    out: dict = {}
    labeled = [LabeledScore(t.study_id, p.score, t.group) for t, p in scored]
    for col, negatives in _SUBGROUPS.items():
        try:
            out[col] = roc_auc(labeled, positive="COVID", negatives=negatives)
        except DegenerateSample:
            out[col] = None

    positives = [(t, p) for t, p in scored if t.group == "COVID"]
    sev = [(t.severity, p.severity) for t, p in positives
           if t.severity is not None and p.severity is not None]
    try:
        out["Spearman's rho"] = (
            spearman_rho([s[0] for s in sev], [s[1] for s in sev]) if len(sev) >= 2 else None
        )
    except ConstantVector:
        out["Spearman's rho"] = None

    dices = [dice(t.lesion_mask, p.lesion_mask) for t, p in positives
             if t.lesion_mask is not None and p.lesion_mask is not None]
    out["Dice Score"] = float(np.mean(dices)) if dices else None
    return out


def evaluate_suite(predictions: dict[str, list[list[StudyPrediction]]],
                   truth: list[StudyTruth] | dict[str, StudyTruth]) -> Report:
    """Evaluate one or more prediction sets per method against ground truth.

    ``predictions`` maps a method name to its prediction sets (one per
    retrained seed/split); cells report mean and std across the sets.
    Studies missing a prediction are collected on the report, not fatal.
    """
    if not isinstance(truth, dict):
        truth = {t.study_id: t for t in truth}
    missing: list[str] = []
    rows = []
    for method, runs in predictions.items():
        per_run = [_evaluate_one(run, truth, missing) for run in runs]
        values = {}
        for col in REPORT_COLUMNS[1:]:
            vals = [r[col] for r in per_run if r[col] is not None]
            if not vals:
                values[col] = None
            else:
                values[col] = (float(np.mean(vals)), float(np.std(vals)))
        rows.append(ReportRow(method=method, values=values))
    return Report(rows=rows, missing=sorted(set(missing)))
