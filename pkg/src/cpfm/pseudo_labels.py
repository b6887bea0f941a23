"""Teacher-label lifecycle: first-pass smoothing, EMA refinement, aggregation.

The buffer keeps one evolving soft label per target sample. Labels enter
once (smoothed), then drift toward the model's own aggregated predictions
via the EMA rule, so the teacher's influence decays geometrically.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError

SIMPLEX_TOL = 1e-9


def smooth_first_epoch(y: np.ndarray) -> np.ndarray:
    """Keep the top-1 probability, spread the remainder uniformly.

    Ties resolve to the lowest class index; the output sums to one exactly.
    """
    y = np.asarray(y, dtype=np.float64)
    k = y.shape[-1]
    if k < 2:
        raise ContractError("smoothing undefined for single-class outputs")
    single = y.ndim == 1
    rows = y.reshape(-1, k)
    top = rows.argmax(axis=1)
    top_vals = rows[np.arange(len(rows)), top]
    out = np.repeat(((1.0 - top_vals) / (k - 1))[:, None], k, axis=1)
    out[np.arange(len(rows)), top] = top_vals
    out = out.reshape(y.shape)
    return out[0] if single and out.ndim > 1 else out


def aggregate_branches(o1: np.ndarray, o2: np.ndarray) -> np.ndarray:
    """Confidence-weighted convex blend of the two branch outputs."""
    o1 = np.asarray(o1, dtype=np.float64)
    o2 = np.asarray(o2, dtype=np.float64)
    if o1.shape != o2.shape:
        raise ContractError("branch outputs must share a shape")
    m1 = o1.max(axis=-1, keepdims=True)
    m2 = o2.max(axis=-1, keepdims=True)
    alpha = m1 / (m1 + m2)
    return alpha * o1 + (1.0 - alpha) * o2


def ema_update(entry: np.ndarray, target_pred: np.ndarray,
               gamma: float) -> np.ndarray:
    """gamma keeps the stored label, (1-gamma) pulls in the new prediction."""
    if not 0.0 <= gamma <= 1.0:
        raise ContractError("gamma must lie in [0, 1]")
    entry = np.asarray(entry, dtype=np.float64)
    target_pred = np.asarray(target_pred, dtype=np.float64)
    return gamma * entry + (1.0 - gamma) * target_pred


class TeacherBuffer:
    """Per-sample soft-label store, indexed by dataset position."""

    def __init__(self, entries: np.ndarray, gamma: float):
        entries = np.asarray(entries, dtype=np.float64)
        if entries.ndim != 2:
            raise ContractError("buffer entries must be (n_samples, classes)")
        if not 0.0 <= gamma <= 1.0:
            raise ContractError("gamma must lie in [0, 1]")
        self.entries = entries
        self.gamma = gamma

    @classmethod
    def initialize(cls, teacher_labels: np.ndarray, gamma: float) -> "TeacherBuffer":
        """Store one smoothed label per sample (first-pass rule)."""
        labels = np.asarray(teacher_labels, dtype=np.float64)
        if labels.ndim != 2:
            raise ContractError("expected one soft label per sample")
        if not np.isfinite(labels).all():
            raise ContractError("teacher labels must be finite")
        return cls(smooth_first_epoch(labels), gamma)

    def __len__(self):
        return len(self.entries)

    def get(self, ids) -> np.ndarray:
        try:
            return self.entries[np.asarray(ids, dtype=np.intp)]
        except IndexError as exc:
            raise ContractError(f"buffer entry missing: {exc}") from None

    def refine(self, ids, aggregated_preds: np.ndarray) -> None:
        idx = np.asarray(ids, dtype=np.intp)
        if idx.max(initial=-1) >= len(self.entries) or idx.min(initial=0) < 0:
            raise ContractError("buffer entry missing for given sample ids")
        self.entries[idx] = ema_update(self.entries[idx], aggregated_preds,
                                       self.gamma)

    def simplex_ok(self, tol: float = SIMPLEX_TOL) -> bool:
        sums = self.entries.sum(axis=1)
        return bool(np.all(np.abs(sums - 1.0) <= tol)
                    and np.all(self.entries >= -tol))
