"""Report rendering: the metric table as delimited text plus matplotlib
figures (ROC curves, a severity ranking bar chart, and a predicted-vs-true
severity scatter) written alongside it."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import REPORT_COLUMNS, Report, StudyPrediction, StudyTruth  # noqa: E402

GROUP_COLORS = {
    "COVID": "#d62728",
    "NORMAL": "#2ca02c",
    "BACTERIAL_PNEUMONIA": "#ff7f0e",
    "NODULES": "#9467bd",
}


def write_metrics_csv(report: Report, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_COLUMNS)
        for row in report.rows:
            cells = [row.method]
            for col in REPORT_COLUMNS[1:]:
                cell = row.values.get(col)
                if cell is None:
                    cells.append("")
                else:
                    mean, std = cell
                    cells.append(f"{mean:.6f}±{std:.6f}")
            writer.writerow(cells)


def _roc_points(scores, labels):
    order = np.argsort(-np.asarray(scores), kind="stable")
    labels = np.asarray(labels)[order]
    pos = max(int(labels.sum()), 1)
    neg = max(int(len(labels) - labels.sum()), 1)
    tpr = [0.0]
    fpr = [0.0]
    tp = fp = 0
    for y in labels:
        if y:
            tp += 1
        else:
            fp += 1
        tpr.append(tp / pos)
        fpr.append(fp / neg)
    return fpr, tpr


def plot_roc_curves(predictions: dict[str, list[StudyPrediction]],
                    truth: dict[str, StudyTruth], path) -> None:
    """One ROC curve per method (COVID vs all others, first prediction set)."""
    fig, ax = plt.subplots(figsize=(5, 5))
    for method, run in predictions.items():
        pairs = [(p.score, truth[p.study_id].group == "COVID")
                 for p in run if p.study_id in truth]
        if not pairs:
            continue
        fpr, tpr = _roc_points([s for s, _ in pairs], [y for _, y in pairs])
        ax.plot(fpr, tpr, label=method, linewidth=1.5)
    ax.plot([0, 1], [0, 1], "k:", linewidth=0.8)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_title("COVID-19 identification ROC")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_severity_ranking(predictions: list[StudyPrediction],
                          truth: dict[str, StudyTruth], path) -> None:
    """Horizontal bars of predicted severity in ranked order, colored by the
    study's true group - the triage queue at a glance."""
    rows = [(p.severity or 0.0, truth[p.study_id].group, p.study_id)
            for p in predictions if p.study_id in truth]
    rows.sort(reverse=True)
    fig, ax = plt.subplots(figsize=(6, max(2.0, 0.22 * len(rows))))
    y = np.arange(len(rows))
    ax.barh(y, [r[0] for r in rows],
            color=[GROUP_COLORS.get(r[1], "#7f7f7f") for r in rows])
    ax.set_yticks(y, [r[2] for r in rows], fontsize=6)
    ax.invert_yaxis()
    ax.set_xlabel("Predicted severity (affected lung fraction)")
    ax.set_title("Severity ranking")
    handles = [plt.Rectangle((0, 0), 1, 1, color=c) for c in GROUP_COLORS.values()]
    ax.legend(handles, GROUP_COLORS.keys(), fontsize=7, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_severity_scatter(predictions: list[StudyPrediction],
                          truth: dict[str, StudyTruth], path) -> None:
    pairs = [(truth[p.study_id].severity, p.severity) for p in predictions
             if p.study_id in truth and p.severity is not None
             and truth[p.study_id].severity is not None]
    fig, ax = plt.subplots(figsize=(5, 5))
    if pairs:
        ax.scatter([a for a, _ in pairs], [b for _, b in pairs], s=18, alpha=0.7)
    ax.plot([0, 1], [0, 1], "k:", linewidth=0.8)
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("True severity")
    ax.set_ylabel("Predicted severity")
    ax.set_title("Severity agreement")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_report(report: Report,
                 predictions: dict[str, list[list[StudyPrediction]]],
                 truth: dict[str, StudyTruth], out_dir) -> list[Path]:
    """Write metrics.csv, metrics.txt and the figures; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    csv_path = out_dir / "metrics.csv"
    write_metrics_csv(report, csv_path)
    written.append(csv_path)

    txt_path = out_dir / "metrics.txt"
    txt_path.write_text(report.to_text() + "\n")
    written.append(txt_path)

    first_runs = {m: runs[0] for m, runs in predictions.items() if runs}
    roc_path = out_dir / "roc_curves.png"
    plot_roc_curves(first_runs, truth, roc_path)
    written.append(roc_path)

    if first_runs:
        first = next(iter(first_runs.values()))
        rank_path = out_dir / "severity_ranking.png"
        plot_severity_ranking(first, truth, rank_path)
        written.append(rank_path)
        scatter_path = out_dir / "severity_scatter.png"
        plot_severity_scatter(first, truth, scatter_path)
        written.append(scatter_path)
    return written
