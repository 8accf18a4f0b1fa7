"""Binary and macro classification metrics, ROC curve and trapezoidal AUC.

The positive class is label 1 (AD).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def degenerate(self) -> bool:
        """True when precision or recall has a zero denominator."""
        return self.tp + self.fp == 0 or self.tp + self.fn == 0

    def as_matrix(self) -> np.ndarray:
        # rows = true class (AD, CN), columns = predicted (AD, CN)
        return np.array([[self.tp, self.fn], [self.fp, self.tn]])

    def normalized(self) -> np.ndarray:
        """Row-normalized matrix indexed [true][pred] with class order (CN, AD)."""
        m = np.array([[self.tn, self.fp], [self.fn, self.tp]], dtype=np.float64)
        sums = m.sum(axis=1, keepdims=True)
        return np.divide(m, sums, out=np.zeros_like(m), where=sums > 0)


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    tpr: float
    fpr: float


def confusion(labels, predictions) -> ConfusionMatrix:
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.shape != predictions.shape:
        raise ValueError("labels and predictions differ in length")
    if np.any((labels != 0) & (labels != 1)) or np.any((predictions != 0) & (predictions != 1)):
        raise ValueError("confusion() expects binary labels")
    pos, ppos = labels == 1, predictions == 1
    return ConfusionMatrix(
        tp=int(np.sum(pos & ppos)),
        tn=int(np.sum(~pos & ~ppos)),
        fp=int(np.sum(~pos & ppos)),
        fn=int(np.sum(pos & ~ppos)),
    )


def accuracy(cm: ConfusionMatrix) -> float:
    return (cm.tp + cm.tn) / cm.total if cm.total else 0.0


def f1(cm: ConfusionMatrix) -> float:
    den = 2 * cm.tp + cm.fp + cm.fn
    return 2 * cm.tp / den if den else 0.0


def tpr(cm: ConfusionMatrix) -> float:
    return cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else 0.0


def fpr(cm: ConfusionMatrix) -> float:
    return cm.fp / (cm.fp + cm.tn) if cm.fp + cm.tn else 0.0


def macro_f1(labels, predictions, n_classes: int) -> tuple[float, bool]:
    """Unweighted mean of per-class F1.

    Returns ``(value, degenerate)``; a class absent from both labels and
    predictions scores 0 and sets the flag.
    """
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    scores, degenerate = [], False
    for c in range(n_classes):
        tp = np.sum((labels == c) & (predictions == c))
        den = np.sum(labels == c) + np.sum(predictions == c)
        if den == 0:
            degenerate = True
            scores.append(0.0)
        else:
            scores.append(2.0 * tp / den)
    return float(np.mean(scores)), degenerate


def roc_curve(labels, scores) -> list[RocPoint]:
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(np.sum(labels == 1))
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: labels contain a single class")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tps = np.cumsum(y == 1)
    fps = np.cumsum(y == 0)
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    points = [RocPoint(float("inf"), 0.0, 0.0)]
    points += [RocPoint(float(s[i]), tps[i] / n_pos, fps[i] / n_neg) for i in ends]
    return points


def auc_from_points(points: list[RocPoint]) -> float:
    x = np.array([p.fpr for p in points])
    y = np.array([p.tpr for p in points])
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


def roc_auc(labels, scores) -> tuple[list[RocPoint], float]:
    points = roc_curve(labels, scores)
    return points, auc_from_points(points)


@dataclass
class TestReport:
    __test__ = False  # not a pytest class

    accuracy: float
    f1_ad: float
    f1_macro: float
    auc: float
    loss: float
    confusion: ConfusionMatrix
    roc: list
    degenerate_f1: bool = False

    def summary(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "f1_ad": self.f1_ad,
            "f1_macro": self.f1_macro,
            "auc": self.auc,
            "loss": self.loss,
            "tp": self.confusion.tp,
            "tn": self.confusion.tn,
            "fp": self.confusion.fp,
            "fn": self.confusion.fn,
        }


def evaluate_predictions(labels, predicted, positive_scores, n_classes: int = 2, loss: float = float("nan")) -> TestReport:
    cm = confusion(labels, predicted)
    macro, macro_flag = macro_f1(labels, predicted, n_classes)
    try:
        points, auc = roc_auc(labels, positive_scores)
    except ValueError:
        points, auc = [], float("nan")
    return TestReport(
        accuracy=accuracy(cm),
        f1_ad=f1(cm),
        f1_macro=macro,
        auc=auc,
        loss=loss,
        confusion=cm,
        roc=points,
        degenerate_f1=cm.degenerate or macro_flag,
    )
