import numpy as np
import pytest

from cttriage.errors import ConstantVector, DegenerateSample, EmptyDiceWarning, ShapeMismatch
from cttriage.metrics import (
    REPORT_COLUMNS,
    LabeledScore,
    StudyPrediction,
    StudyTruth,
    dice,
    evaluate_suite,
    roc_auc,
    spearman_rho,
)

from oracles import dice_by_sets, pair_count_auc, spearman_by_ranks


def scores_from(pos, neg):
    out = [LabeledScore(f"p{i}", s, "COVID") for i, s in enumerate(pos)]
    out += [LabeledScore(f"n{i}", s, "NORMAL") for i, s in enumerate(neg)]
    return out


def test_auc_perfect_separation():
    assert roc_auc(scores_from([1.0, 1.0], [0.0, 0.0, 0.0])) == 1.0


def test_auc_all_ties():
    assert roc_auc(scores_from([0.5, 0.5], [0.5, 0.5])) == 0.5


def test_auc_six_study_fixture():
    pos = [0.9, 0.4, 0.65]
    neg = [0.2, 0.65, 0.5]
    got = roc_auc(scores_from(pos, neg))
    assert got == pytest.approx(pair_count_auc(pos, neg), abs=1e-12)


def test_auc_degenerate():
    with pytest.raises(DegenerateSample):
        roc_auc([LabeledScore("a", 1.0, "COVID")])


def test_auc_negation_identity():
    rng = np.random.default_rng(0)
    for _ in range(20):
        pos = rng.normal(size=4).tolist()
        neg = rng.normal(size=5).tolist()
        a = roc_auc(scores_from(pos, neg))
        b = roc_auc(scores_from([-p for p in pos], [-n for n in neg]))
        assert a + b == pytest.approx(1.0, abs=1e-12)


def test_auc_order_invariant():
    rng = np.random.default_rng(1)
    pos = rng.normal(size=5).tolist()
    neg = rng.normal(size=6).tolist()
    base = roc_auc(scores_from(pos, neg))
    shuffled = scores_from(pos, neg)
    rng.shuffle(shuffled)
    assert roc_auc(shuffled) == pytest.approx(base, abs=1e-12)


def test_spearman_identity_and_reversal():
    y = [0.1, 0.5, 0.3, 0.9]
    assert spearman_rho(y, y) == pytest.approx(1.0, abs=1e-12)
    assert spearman_rho(y, [-v for v in y]) == pytest.approx(-1.0, abs=1e-12)


def test_spearman_tie_fixture():
    y_true = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0]  # one tie
    y_pred = [2.5, 1.1, 3.9, 1.4, 5.2, 8.1, 2.2, 6.3]
    got = spearman_rho(y_true, y_pred)
    assert got == pytest.approx(spearman_by_ranks(y_true, y_pred), abs=1e-12)


def test_spearman_constant_rejected():
    with pytest.raises(ConstantVector):
        spearman_rho([1.0, 1.0, 1.0], [0.1, 0.2, 0.3])


def test_spearman_monotone_transform_invariant():
    rng = np.random.default_rng(2)
    a = rng.normal(size=9)
    b = rng.normal(size=9)
    base = spearman_rho(a, b)
    assert spearman_rho(np.exp(a), b) == pytest.approx(base, abs=1e-12)
    assert spearman_rho(a, 3.0 * b + 7.0) == pytest.approx(base, abs=1e-12)


def test_dice_basic_cases():
    a = np.zeros((2, 4, 4), dtype=np.uint8)
    a[0, :2, :2] = 1
    assert dice(a, a) == 1.0
    b = np.zeros((2, 4, 4), dtype=np.uint8)
    b[1, 2:, 2:] = 1
    assert dice(a, b) == 0.0


def test_dice_half_overlap():
    a = np.zeros((1, 4, 4), dtype=np.uint8)
    b = np.zeros((1, 4, 4), dtype=np.uint8)
    a[0, 0, :] = 1
    a[0, 1, :] = 1  # |a| = 8
    b[0, 1, :] = 1
    b[0, 2, :] = 1  # |b| = 8, overlap 4
    assert dice(a, b) == 0.5


def test_dice_empty_convention():
    empty = np.zeros((2, 2, 2), dtype=np.uint8)
    with pytest.warns(EmptyDiceWarning):
        assert dice(empty, empty) == 1.0


def test_dice_symmetric_and_shape_checked():
    rng = np.random.default_rng(3)
    a = (rng.random((3, 5, 5)) > 0.6).astype(np.uint8)
    b = (rng.random((3, 5, 5)) > 0.6).astype(np.uint8)
    assert dice(a, b) == dice(b, a)
    assert dice(a, b) == pytest.approx(dice_by_sets(a, b), abs=1e-12)
    with pytest.raises(ShapeMismatch):
        dice(a, np.zeros((2, 5, 5), dtype=np.uint8))


def _toy_truth():
    groups = ["COVID", "COVID", "NORMAL", "BACTERIAL_PNEUMONIA", "NODULES"]
    return [
        StudyTruth(study_id=f"s{i}", group=g, severity=0.1 * (i + 1))
        for i, g in enumerate(groups)
    ]


def test_suite_perfect_predictions():
    truth = _toy_truth()
    preds = [StudyPrediction(study_id=t.study_id,
                             score=1.0 if t.group == "COVID" else 0.0,
                             severity=t.severity)
             for t in truth]
    report = evaluate_suite({"oracle": [preds]}, truth)
    row = report.rows[0].values
    for col in REPORT_COLUMNS[1:-1]:
        assert row[col][0] == pytest.approx(1.0)
    assert row["Dice Score"] is None  # no masks supplied


def test_suite_schema_and_row_order():
    truth = _toy_truth()
    preds = [StudyPrediction(study_id=t.study_id, score=0.5, severity=0.5)
             for t in truth]
    report = evaluate_suite({"threshold": [preds], "multitask": [preds]}, truth)
    assert REPORT_COLUMNS == (
        "Method", "ROC-AUC vs All others", "ROC-AUC vs Normal",
        "ROC-AUC vs Bac. Pneum.", "ROC-AUC vs Nodules", "Spearman's rho",
        "Dice Score")
    assert [r.method for r in report.rows] == ["threshold", "multitask"]
    records = report.to_records()
    assert list(records[0].keys()) == list(REPORT_COLUMNS)


def test_suite_matches_individual_oracles():
    rng = np.random.default_rng(4)
    truth = []
    preds = []
    groups = ["COVID"] * 6 + ["NORMAL"] * 4 + ["BACTERIAL_PNEUMONIA"] * 3 + ["NODULES"] * 3
    for i, g in enumerate(groups):
        sev = float(rng.uniform(0, 1)) if g == "COVID" else 0.0
        truth.append(StudyTruth(study_id=f"s{i}", group=g, severity=sev))
        preds.append(StudyPrediction(
            study_id=f"s{i}",
            score=float(sev + rng.normal(0, 0.2)) if g == "COVID" else float(rng.normal(0.2, 0.2)),
            severity=float(sev + rng.normal(0, 0.05))))
    report = evaluate_suite({"m": [preds]}, truth)
    row = report.rows[0].values

    pos = [p.score for p, t in zip(preds, truth) if t.group == "COVID"]
    neg_all = [p.score for p, t in zip(preds, truth) if t.group != "COVID"]
    assert row["ROC-AUC vs All others"][0] == pytest.approx(
        pair_count_auc(pos, neg_all), abs=1e-12)
    neg_n = [p.score for p, t in zip(preds, truth) if t.group == "NORMAL"]
    assert row["ROC-AUC vs Normal"][0] == pytest.approx(
        pair_count_auc(pos, neg_n), abs=1e-12)
    sev_t = [t.severity for t in truth if t.group == "COVID"]
    sev_p = [p.severity for p, t in zip(preds, truth) if t.group == "COVID"]
    assert row["Spearman's rho"][0] == pytest.approx(
        spearman_by_ranks(sev_t, sev_p), abs=1e-12)


def test_suite_missing_predictions_collected():
    truth = _toy_truth()
    preds = [StudyPrediction(study_id="s0", score=1.0, severity=0.1),
             StudyPrediction(study_id="s2", score=0.0)]
    report = evaluate_suite({"m": [preds]}, truth)
    assert set(report.missing) == {"s1", "s3", "s4"}


def test_suite_mean_std_across_runs():
    truth = _toy_truth()
    runs = []
    for offset in (0.0, 0.4):
        runs.append([StudyPrediction(
            study_id=t.study_id,
            score=(1.0 - offset) if t.group == "COVID" else (0.0 + offset),
            severity=t.severity) for t in truth])
    report = evaluate_suite({"m": runs}, truth)
    mean, std = report.rows[0].values["ROC-AUC vs Normal"]
    assert mean == pytest.approx((1.0 + 1.0) / 2)  # both runs still separate
    assert std == pytest.approx(0.0)
