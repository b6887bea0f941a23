"""Evaluation metrics."""

from __future__ import annotations

import numpy as np

from .errors import ContractError


def confusion_matrix(preds, labels, classes: int) -> np.ndarray:
    p = np.asarray(preds, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape:
        raise ContractError("predictions and labels must align")
    cm = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(cm, (y, p), 1)
    return cm


def macro_f1(preds, labels, classes: int) -> float:
    """Unweighted mean of per-class F1 scores, scaled to [0, 100].

    A class with zero precision+recall (including classes absent from both
    predictions and labels) contributes F1 = 0.
    """
    p = np.asarray(preds, dtype=np.int64)
    if p.size == 0:
        raise ContractError("macro_f1 needs at least one prediction")
    cm = confusion_matrix(p, labels, classes)
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    f1 = np.divide(2 * tp, denom, out=np.zeros(classes), where=denom > 0)
    return float(f1.mean() * 100.0)
