"""Classification and ranking metrics, macro-averaged over classes."""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, UndefinedMetricError

log = logging.getLogger(__name__)

# CSV column order for MetricsReport rows.
REPORT_COLUMNS = ("split", "n_samples", "accuracy", "macro_precision", "macro_recall",
                  "macro_f1", "auroc", "auprc")


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """``K x K`` counts, rows are true classes and columns predicted classes."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise DataError(f"label shapes differ: {y_true.shape} vs {y_pred.shape}")
    for name, arr in (("true", y_true), ("predicted", y_pred)):
        bad = np.flatnonzero((arr < 0) | (arr >= n_classes))
        if bad.size:
            raise DataError(f"{name} label {arr[bad[0]]} at record {bad[0]} is outside [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def per_class_scores(cm) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class precision, recall and F1; a zero denominator yields 0."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    pred = cm.sum(axis=0)
    true = cm.sum(axis=1)
    precision = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    recall = np.divide(tp, true, out=np.zeros_like(tp), where=true > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    degenerate = np.flatnonzero((pred == 0) | (true == 0))
    if degenerate.size:
        log.debug("classes %s have an empty row or column; they contribute 0", degenerate.tolist())
    return precision, recall, f1


def classification_metrics(cm, weighted: bool = False) -> tuple[float, float, float, float]:
    """``(accuracy, precision, recall, f1)`` averaged over all K classes.

    With ``weighted`` the class average uses support (row sums) as weights
    instead of the plain mean.
    """
    cm = np.asarray(cm)
    n = cm.sum()
    if n < 1:
        raise DataError("confusion matrix is empty")
    precision, recall, f1 = per_class_scores(cm)
    if weighted:
        w = cm.sum(axis=1) / n
    else:
        w = np.full(len(cm), 1.0 / len(cm))
    acc = float(np.trace(cm) / n)
    return acc, float(precision @ w), float(recall @ w), float(f1 @ w)


def _binary_inputs(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise DataError(f"{scores.size} scores but {labels.size} labels")
    if not np.isin(labels, (0, 1)).all():
        raise DataError("binary labels must be 0 or 1")
    return scores, labels.astype(bool)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their mean rank."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    starts = np.r_[0, np.flatnonzero(np.diff(xs)) + 1]
    ends = np.r_[starts[1:], len(xs)]
    ranks = np.empty(len(x))
    ranks[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    return ranks


def auroc(scores, labels) -> float:
    """P(score of a random positive > score of a random negative), ties counting one half."""
    scores, pos = _binary_inputs(scores, labels)
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both classes present")
    # Rank sums are multiples of 1/2, so the U statistic is exact in floating point.
    u = _average_ranks(scores)[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Average precision: ``sum (R_i - R_{i-1}) P_i`` over descending thresholds, ties grouped."""
    scores, pos = _binary_inputs(scores, labels)
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUPRC needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], pos[order]
    # last index of each group of equal scores
    cut = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp = np.cumsum(y)[cut]
    seen = cut + 1
    precision = tp / seen
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def multiclass_rank_metrics(probs, labels) -> tuple[float, float]:
    """One-vs-rest AUROC and AUPRC averaged over the classes present in ``labels``."""
    probs = np.asarray(probs.data if hasattr(probs, "data") else probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[1] < 2:
        raise DataError(f"expected probabilities [B, K>=2], got {probs.shape}")
    k = probs.shape[1]
    rocs, prs = [], []
    for c in range(k):
        y = labels == c
        if not y.any() or y.all():
            log.info("class %d skipped in ranking metrics (absent or alone)", c)
            continue
        rocs.append(auroc(probs[:, c], y.astype(int)))
        prs.append(auprc(probs[:, c], y.astype(int)))
    if not rocs:
        raise UndefinedMetricError("ranking metrics need at least two classes present")
    return float(np.mean(rocs)), float(np.mean(prs))


@dataclass
class MetricsReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    auroc: float
    auprc: float
    n_samples: int
    split: str = "test"
    per_class: dict[str, list[float]] = field(default_factory=dict)

    def row(self) -> dict:
        return {name: getattr(self, name) for name in REPORT_COLUMNS}

    def to_text(self) -> str:
        lines = [f"{key} = {_fmt(value)}" for key, value in self.row().items()]
        for key, values in self.per_class.items():
            lines.append(f"{key} = {','.join(_fmt(v) for v in values)}")
        return "\n".join(lines) + "\n"

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        if header:
            buf.write(",".join(REPORT_COLUMNS) + "\n")
        buf.write(",".join(_fmt(v) for v in self.row().values()) + "\n")
        return buf.getvalue()


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


def evaluate(probs, labels, split: str = "test", weighted: bool = False) -> MetricsReport:
    """All six metrics for class probabilities ``probs[B, K]`` against integer labels."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise DataError(f"{split} split is empty")
    cm = confusion_matrix(labels, probs.argmax(axis=1), probs.shape[1])
    acc, p, r, f1 = classification_metrics(cm, weighted=weighted)
    try:
        roc, pr = multiclass_rank_metrics(probs, labels)
    except UndefinedMetricError:
        log.warning("ranking metrics undefined on %s split; reporting nan", split)
        roc = pr = float("nan")
    cp, cr, cf = per_class_scores(cm)
    per_class = {"class_precision": cp.tolist(), "class_recall": cr.tolist(), "class_f1": cf.tolist()}
    return MetricsReport(acc, p, r, f1, roc, pr, int(len(labels)), split, per_class)
