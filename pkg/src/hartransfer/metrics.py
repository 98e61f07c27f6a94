"""Macro F1 and the confusion matrix it is computed from."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass
class ConfusionMatrix:
    """Counts matrix, rows = true class, columns = predicted class."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ConfigurationError(f"confusion matrix must be square, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise ConfigurationError("confusion matrix counts must be nonnegative")

    @classmethod
    def from_predictions(cls, y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> "ConfusionMatrix":
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        for t, p in zip(np.asarray(y_true), np.asarray(y_pred)):
            counts[t, p] += 1
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def macro_f1(cm: ConfusionMatrix) -> float:
    """Unweighted mean of per-class F1: F = (2/|C|) sum_c prec_c*rec_c/(prec_c+rec_c).

    A class whose precision and recall are both zero (including classes
    absent from truth and prediction) contributes 0 and still counts
    toward |C|.
    """
    counts = cm.counts
    n = counts.shape[0]
    if n < 2:
        raise ConfigurationError(f"need at least 2 classes, got {n}")
    if counts.sum() == 0:
        raise ConfigurationError("empty confusion matrix")
    total = 0.0
    for c in range(n):
        tp = counts[c, c]
        pred_c = counts[:, c].sum()
        true_c = counts[c, :].sum()
        prec = tp / pred_c if pred_c else 0.0
        rec = tp / true_c if true_c else 0.0
        if prec + rec > 0:
            total += prec * rec / (prec + rec)
    return 2.0 * total / n
