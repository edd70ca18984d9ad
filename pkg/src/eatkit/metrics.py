"""Confusion-matrix based classification metrics.

Precision, recall and F1 are one-vs-rest per class and macro-averaged.
MCC is the multiclass R_K statistic, which reduces to the usual binary
formula for two classes. Any ratio with a zero denominator is reported
as 0 and flagged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ConfusionMatrix:
    """K×K counts; rows are true classes, columns predicted classes."""

    def __init__(self, num_classes: int | None = None, class_names: Sequence[str] | None = None,
                 counts: np.ndarray | None = None):
        if counts is not None:
            counts = np.array(counts, dtype=np.int64)
            if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
                raise ValueError(f"confusion matrix must be square, got shape {counts.shape}")
            if (counts < 0).any():
                raise ValueError("confusion matrix entries must be non-negative")
            num_classes = counts.shape[0]
        elif num_classes is None:
            num_classes = len(class_names) if class_names is not None else None
        if not num_classes:
            raise ValueError("need num_classes, class_names or counts")
        self.counts = counts if counts is not None else np.zeros((num_classes, num_classes), dtype=np.int64)
        names = list(class_names) if class_names is not None else [str(k) for k in range(num_classes)]
        if len(names) != num_classes:
            raise ValueError(f"{len(names)} class names for {num_classes} classes")
        self.class_names = names

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def _check(self, label: int) -> int:
        label = int(label)
        if not 0 <= label < self.num_classes:
            raise ValueError(f"label {label} outside [0, {self.num_classes})")
        return label

    def accumulate(self, true_label: int, predicted_label: int) -> "ConfusionMatrix":
        self.counts[self._check(true_label), self._check(predicted_label)] += 1
        return self

    def update(self, true_labels: Sequence[int], predicted_labels: Sequence[int]) -> "ConfusionMatrix":
        t = np.asarray(true_labels, dtype=np.int64)
        p = np.asarray(predicted_labels, dtype=np.int64)
        if t.shape != p.shape:
            raise ValueError("true and predicted label arrays differ in length")
        k = self.num_classes
        if t.size and (t.min() < 0 or p.min() < 0 or t.max() >= k or p.max() >= k):
            raise ValueError(f"labels outside [0, {k})")
        np.add.at(self.counts, (t, p), 1)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(class_names=self.class_names, counts=self.counts + other.counts)

    def __eq__(self, other) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)


def _ratio(num: float, den: float) -> tuple[float, bool]:
    return (num / den, False) if den else (0.0, True)


@dataclass
class ClassScores:
    name: str
    precision: float
    recall: float
    f1: float
    support: int
    degenerate: bool


def per_class_prf(cm: ConfusionMatrix) -> tuple[list[ClassScores], tuple[float, float, float]]:
    """One-vs-rest precision/recall/F1 per class and their macro averages."""
    c = cm.counts
    tp = np.diag(c)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    rows = []
    for k in range(cm.num_classes):
        p, dp = _ratio(tp[k], tp[k] + fp[k])
        r, dr = _ratio(tp[k], tp[k] + fn[k])
        f, df = _ratio(2 * p * r, p + r)
        rows.append(ClassScores(cm.class_names[k], p, r, f, int(tp[k] + fn[k]), dp or dr or df))
    k = max(cm.num_classes, 1)
    macro = (sum(s.precision for s in rows) / k, sum(s.recall for s in rows) / k, sum(s.f1 for s in rows) / k)
    return rows, macro


def accuracy(cm: ConfusionMatrix) -> float:
    return _ratio(float(np.trace(cm.counts)), float(cm.total))[0]


def mcc(cm: ConfusionMatrix) -> float:
    """Multiclass Matthews correlation (R_K); 0 when undefined."""
    c = cm.counts.astype(np.float64)
    s = c.sum()
    correct = np.trace(c)
    t = c.sum(axis=1)
    p = c.sum(axis=0)
    num = correct * s - p @ t
    den = math.sqrt((s * s - p @ p) * (s * s - t @ t))
    return float(np.clip(num / den, -1.0, 1.0)) if den else 0.0


@dataclass
class Report:
    accuracy: float
    precision: float
    recall: float
    f1: float
    mcc: float
    per_class: list[ClassScores]
    counts: list[list[int]]
    total: int
    averaging: str = "macro"
    mcc_kind: str = "multiclass R_K"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "accuracy": self.accuracy,
            "averaging": self.averaging,
            "confusion_matrix": self.counts,
            "f1": self.f1,
            "mcc": self.mcc,
            "mcc_kind": self.mcc_kind,
            "per_class": [vars(s).copy() for s in self.per_class],
            "precision": self.precision,
            "recall": self.recall,
            "total": self.total,
        }
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_text(self) -> str:
        width = max([len("class")] + [len(s.name) for s in self.per_class])
        lines = [
            f"{'Precision':>10} {'Recall':>10} {'F1-score':>10} {'Accuracy':>10} {'MCC':>10}",
            f"{self.precision:>10.4f} {self.recall:>10.4f} {self.f1:>10.4f} {self.accuracy:>10.4f} {self.mcc:>10.4f}",
            f"({self.averaging} averages over {len(self.per_class)} classes, MCC = {self.mcc_kind}, n = {self.total})",
            "",
            f"{'class':<{width}} {'precision':>10} {'recall':>10} {'f1':>10} {'support':>8}",
        ]
        for s in self.per_class:
            flag = "  *" if s.degenerate else ""
            lines.append(f"{s.name:<{width}} {s.precision:>10.4f} {s.recall:>10.4f} {s.f1:>10.4f} {s.support:>8d}{flag}")
        if any(s.degenerate for s in self.per_class):
            lines.append("* zero denominator in at least one ratio; reported as 0")
        return "\n".join(lines)


def report(cm: ConfusionMatrix) -> Report:
    rows, (p, r, f) = per_class_prf(cm)
    return Report(accuracy=accuracy(cm), precision=p, recall=r, f1=f, mcc=mcc(cm), per_class=rows,
                  counts=cm.counts.tolist(), total=cm.total)
