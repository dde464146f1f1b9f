"""Binary classification metrics, including the normalized MCC."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import EmptyInput, LengthMismatch

COLUMNS = ("Acc.", "Prec.", "Rec.", "F1", "nMCC")


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    nmcc: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def mcc(self) -> float:
        return 2 * self.nmcc - 1

    def row(self) -> tuple[float, ...]:
        return (self.accuracy, self.precision, self.recall, self.f1, self.nmcc)

    def as_dict(self) -> dict:
        return asdict(self)


def confusion(predictions, labels) -> tuple[int, int, int, int]:
    p = np.asarray(predictions).astype(bool).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    if p.shape != y.shape:
        raise LengthMismatch(f"{p.size} predictions vs {y.size} labels")
    if p.size == 0:
        raise EmptyInput("no predictions")
    tp = int(np.sum(p & y))
    fp = int(np.sum(p & ~y))
    fn = int(np.sum(~p & y))
    tn = int(np.sum(~p & ~y))
    return tp, fp, fn, tn


def mcc_from_confusion(tp: int, fp: int, fn: int, tn: int) -> float:
    """Matthews correlation; 0 when any marginal is empty."""
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def metrics_from_confusion(tp: int, fp: int, fn: int, tn: int) -> Metrics:
    n = tp + fp + fn + tn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    nmcc = (mcc_from_confusion(tp, fp, fn, tn) + 1) / 2
    return Metrics((tp + tn) / n, precision, recall, f1, nmcc, tp, fp, fn, tn)


def compute_metrics(predictions, labels) -> Metrics:
    """Accuracy, precision, recall, F1 and nMCC for binary predictions.

    Precision and recall are 0 when nothing was predicted/present; nMCC is
    ``(mcc + 1) / 2`` with ``mcc = 0`` on a zero denominator, so a constant
    predictor always scores 0.5.
    """
    return metrics_from_confusion(*confusion(predictions, labels))


def mean_metrics(items) -> Metrics:
    items = list(items)
    if not items:
        raise EmptyInput("no metrics to average")
    cols = np.array([m.row() for m in items], dtype=np.float64).mean(axis=0)
    return Metrics(*map(float, cols))
