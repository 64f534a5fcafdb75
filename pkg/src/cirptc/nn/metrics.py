"""Confusion matrices and per-class diagnostic metrics."""

from __future__ import annotations

import numpy as np

__all__ = ["confusion_matrix", "classify_metrics"]


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Counts with true classes on rows and predictions on columns."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("label arrays differ in shape")
    for a in (y_true, y_pred):
        if a.size and (a.min() < 0 or a.max() >= n_classes):
            raise ValueError("label out of range")
    C = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(C, (y_true, y_pred), 1)
    return C


def _ratio(num, den):
    return None if den == 0 else num / den


def classify_metrics(confusion, positive_class: int = 0) -> dict:
    """Accuracy, sensitivity and specificity for ``positive_class`` versus the rest.

    A metric whose denominator is empty is reported as ``None``.
    """
    C = np.asarray(confusion)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError("confusion matrix must be square")
    if np.any(C < 0) or not np.all(np.equal(np.mod(C, 1), 0)):
        raise ValueError("confusion counts must be nonnegative integers")
    if not 0 <= positive_class < C.shape[0]:
        raise ValueError("positive class out of range")
    total = C.sum()
    p = positive_class
    tp = C[p, p]
    fn = C[p].sum() - tp
    fp = C[:, p].sum() - tp
    tn = total - tp - fn - fp
    return {
        "accuracy": _ratio(np.trace(C), total),
        "sensitivity": _ratio(tp, tp + fn),
        "specificity": _ratio(tn, tn + fp),
    }
