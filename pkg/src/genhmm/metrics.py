"""Classification metrics and report formatting.

Precision and F1 are macro-averaged (unweighted mean over classes); a
class that is never predicted contributes precision 0.  Unclassifiable
sequences (every class scored -inf) are counted separately and excluded
from the confusion matrix, but still count against accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["MetricsReport", "report_from_predictions", "format_table", "to_kv_lines"]


@dataclass
class MetricsReport:
    labels: list
    confusion: np.ndarray          # rows: true class, cols: predicted
    n_unclassified: np.ndarray     # per true class
    accuracy: float
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    macro_precision: float
    macro_f1: float
    metadata: dict = field(default_factory=dict)


def report_from_predictions(labels, y_true, y_pred, metadata=None):
    """Build a report from integer class indices; ``None`` predictions
    mark unclassifiable sequences."""
    n = len(labels)
    confusion = np.zeros((n, n), dtype=np.int64)
    unclassified = np.zeros(n, dtype=np.int64)
    for truth, pred in zip(y_true, y_pred):
        if pred is None:
            unclassified[truth] += 1
        else:
            confusion[truth, pred] += 1
    total = len(y_true)
    accuracy = float(np.trace(confusion)) / total if total else 0.0
    pred_totals = confusion.sum(axis=0)
    true_totals = confusion.sum(axis=1) + unclassified
    diag = np.diag(confusion)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(pred_totals > 0, diag / pred_totals, 0.0)
        recall = np.where(true_totals > 0, diag / true_totals, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2.0 * precision * recall / denom, 0.0)
    return MetricsReport(
        labels=list(labels),
        confusion=confusion,
        n_unclassified=unclassified,
        accuracy=accuracy,
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        macro_precision=float(precision.mean()),
        macro_f1=float(f1.mean()),
        metadata=dict(metadata or {}),
    )


def format_table(report):
    """Human-readable summary table."""
    lines = []
    lines.append(f"accuracy        {report.accuracy:.4f}")
    lines.append(f"macro precision {report.macro_precision:.4f}")
    lines.append(f"macro F1        {report.macro_f1:.4f}")
    lines.append("")
    width = max(len(str(lbl)) for lbl in report.labels)
    lines.append(f"{'class':<{width}}  precision  recall  f1      support")
    support = report.confusion.sum(axis=1) + report.n_unclassified
    for i, lbl in enumerate(report.labels):
        lines.append(f"{str(lbl):<{width}}  {report.per_class_precision[i]:<9.4f}  "
                     f"{report.per_class_recall[i]:<6.4f}  "
                     f"{report.per_class_f1[i]:<6.4f}  {support[i]}")
    lines.append("")
    lines.append("confusion (rows: true, cols: predicted)")
    header = " ".join(f"{str(lbl):>8}" for lbl in report.labels)
    lines.append(f"{'':<{width}} {header}")
    for i, lbl in enumerate(report.labels):
        row = " ".join(f"{v:>8d}" for v in report.confusion[i])
        lines.append(f"{str(lbl):<{width}} {row}")
    if report.n_unclassified.any():
        lines.append(f"unclassified per class: {report.n_unclassified.tolist()}")
    for key, val in report.metadata.items():
        lines.append(f"{key}: {val}")
    return "\n".join(lines)


def to_kv_lines(report):
    """Machine-readable key=value document (one pair per line)."""
    lines = []

    def put(key, val):
        lines.append(f"{key} = {val}")

    put("accuracy", f"{report.accuracy:.17g}")
    put("macro_precision", f"{report.macro_precision:.17g}")
    put("macro_f1", f"{report.macro_f1:.17g}")
    put("labels", ",".join(str(lbl) for lbl in report.labels))
    for i, lbl in enumerate(report.labels):
        put(f"precision.{lbl}", f"{report.per_class_precision[i]:.17g}")
        put(f"recall.{lbl}", f"{report.per_class_recall[i]:.17g}")
        put(f"f1.{lbl}", f"{report.per_class_f1[i]:.17g}")
        put(f"unclassified.{lbl}", int(report.n_unclassified[i]))
    for i, true_lbl in enumerate(report.labels):
        row = ",".join(str(v) for v in report.confusion[i])
        put(f"confusion.{true_lbl}", row)
    for key, val in report.metadata.items():
        put(f"meta.{key}", val)
    return "\n".join(lines) + "\n"
