"""Confusion matrices and detection metrics.

Multiclass accuracy is trace/total; weighted recall is the support-weighted
mean of per-class recalls, which is the same quantity and is computed in that
exact form. Binary metrics treat class 0 (Benign) as the negative class and
every attack class as positive, so attack-to-attack confusions still count as
true positives.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [true][predicted]
    class_names: list[str] | None = None

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise DataError("confusion matrix must be square")
        if np.any(self.counts < 0):
            raise DataError("confusion matrix counts must be >= 0")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]


@dataclass
class MetricsRow:
    """The eight reported aggregates for one evaluation."""

    multiclass_accuracy: float
    macro_recall: float
    weighted_recall: float
    binary_accuracy: float
    binary_fpr: float
    binary_precision: float
    binary_recall: float
    binary_f1: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class DerivedMetrics:
    row: MetricsRow
    per_class_recall: np.ndarray
    per_class_support: np.ndarray
    zero_support_classes: list[int] = field(default_factory=list)


def confusion_matrix(predictions, truths, num_classes: int,
                     class_names: list[str] | None = None) -> ConfusionMatrix:
    preds = np.asarray(predictions, dtype=np.int64)
    trues = np.asarray(truths, dtype=np.int64)
    if preds.shape != trues.shape:
        raise DataError("predictions and truths lengths differ")
    if len(preds) and (preds.min() < 0 or preds.max() >= num_classes
                       or trues.min() < 0 or trues.max() >= num_classes):
        raise IndexError(f"class index out of range for {num_classes} classes")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (trues, preds), 1)
    return ConfusionMatrix(counts, class_names)


def binary_collapse(cm: ConfusionMatrix) -> ConfusionMatrix:
    """Collapse to benign-vs-malicious; class 0 must be Benign."""
    c = cm.counts
    tn = int(c[0, 0])
    fp = int(c[0, 1:].sum())
    fn = int(c[1:, 0].sum())
    tp = int(c[1:, 1:].sum())
    return ConfusionMatrix(np.array([[tn, fp], [fn, tp]]), ["Benign", "Malicious"])


def _safe_div(num: float, den: float) -> tuple[float, bool]:
    # 0/0 reported as 0 with a flag
    if den == 0:
        return 0.0, True
    return num / den, False


def derive_metrics(cm: ConfusionMatrix) -> DerivedMetrics:
    """Accuracy, per-class/macro/weighted recall, and binary-collapse metrics."""
    counts = cm.counts
    total = cm.total
    if total == 0:
        raise DataError("cannot derive metrics from an all-zero confusion matrix")

    support = counts.sum(axis=1)
    diag = np.diagonal(counts)
    recalls = np.zeros(cm.num_classes)
    zero_support = []
    for j in range(cm.num_classes):
        recalls[j], flagged = _safe_div(float(diag[j]), float(support[j]))
        if flagged:
            zero_support.append(j)
    present = [j for j in range(cm.num_classes) if support[j] > 0]
    macro_recall = float(np.mean(recalls[present]))
    multiclass_accuracy = float(diag.sum()) / total
    # support-weighted mean of recalls: sum_j (n_j/N) * (c_jj/n_j) = trace/N
    weighted_recall = multiclass_accuracy

    b = binary_collapse(cm) if cm.num_classes > 2 else cm
    tn, fp = int(b.counts[0, 0]), int(b.counts[0, 1])
    fn, tp = int(b.counts[1, 0]), int(b.counts[1, 1])
    bin_acc = (tp + tn) / total
    fpr, _ = _safe_div(fp, fp + tn)
    precision, _ = _safe_div(tp, tp + fp)
    recall, _ = _safe_div(tp, tp + fn)
    f1, _ = _safe_div(2 * precision * recall, precision + recall)

    row = MetricsRow(multiclass_accuracy, macro_recall, weighted_recall,
                     bin_acc, fpr, precision, recall, f1)
    return DerivedMetrics(row, recalls, support, zero_support)


def forgetting(recall_history: list[dict[str, float]]) -> dict[str, dict[str, float]]:
    """Per-class drop from the best earlier recall to the final one.

    recall_history[i] maps class name -> recall after task i, containing only
    classes already introduced. Classes first measured at the final task have
    no earlier reference and are omitted.
    """
    if not recall_history:
        return {}
    final = recall_history[-1]
    out: dict[str, dict[str, float]] = {}
    for name in final:
        earlier = [h[name] for h in recall_history[:-1] if name in h]
        if not earlier:
            continue
        raw = max(earlier) - final[name]
        out[name] = {"raw": raw, "floored": max(raw, 0.0)}
    return out
