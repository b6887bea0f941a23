"""Multi-teacher fusion via inverse-entropy transferability weights.

A confident teacher (low mean Shannon entropy over the target set) earns a
larger weight; weights are max-normalized so the best teacher sits at 1,
then blended across epochs with a momentum coefficient proportional to the
fraction of trustworthy pseudo-labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

ENTROPY_LOG_EPS = 1e-12
ENTROPY_FLOOR = 1e-6


def shannon_entropy(probs: np.ndarray) -> np.ndarray:
    """Per-row entropy in nats with an epsilon-guarded log."""
    p = np.asarray(probs, dtype=np.float64)
    return -(p * np.log(p + ENTROPY_LOG_EPS)).sum(axis=-1)


def entropy_weight(preds: np.ndarray) -> float:
    """Inverse mean entropy of one teacher's predictions over a batch."""
    h = float(shannon_entropy(preds).mean())
    return 1.0 / max(h, ENTROPY_FLOOR)


def normalize_weights(etas) -> np.ndarray:
    """Scale raw weights so the largest equals exactly one."""
    e = np.asarray(etas, dtype=np.float64)
    if e.size == 0:
        raise ContractError("cannot normalize an empty weight list")
    if np.any(e <= 0):
        raise ContractError("raw weights must be positive")
    return e / e.max()


def momentum_update_weights(prev, new, n_pseudo: int, n_total: int) -> np.ndarray:
    """Convex blend of previous and new weights, alpha = n_pseudo/n_total."""
    if n_total <= 0:
        raise ContractError("n_total must be positive")
    if not 0 <= n_pseudo <= n_total:
        raise ContractError("n_pseudo must lie in [0, n_total]")
    alpha = n_pseudo / n_total
    return alpha * np.asarray(prev, dtype=np.float64) \
        + (1.0 - alpha) * np.asarray(new, dtype=np.float64)


def combine_teachers(preds, lambdas) -> np.ndarray:
    """Weighted sum of teacher predictions, renormalized to the simplex.

    preds: (M, ..., K) stacked teacher outputs; lambdas: M weights.
    """
    stack = np.asarray(preds, dtype=np.float64)
    lam = np.asarray(lambdas, dtype=np.float64)
    if stack.shape[0] != lam.shape[0]:
        raise ContractError("one weight per teacher required")
    if np.all(lam == 0.0):
        raise ContractError("at least one non-zero teacher weight required")
    shaped = lam.reshape((-1,) + (1,) * (stack.ndim - 1))
    fused = (shaped * stack).sum(axis=0)
    return fused / fused.sum(axis=-1, keepdims=True)


@dataclass
class TransferWeights:
    """Per-teacher raw and normalized weights tracked across epochs."""

    eta: np.ndarray
    lam: np.ndarray
    epoch: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def from_teacher_preds(cls, all_preds) -> "TransferWeights":
        etas = np.array([entropy_weight(p) for p in all_preds])
        tw = cls(eta=etas, lam=normalize_weights(etas))
        tw.snapshot()
        return tw

    def refresh(self, all_preds, n_pseudo: int, n_total: int) -> None:
        """Per-epoch update: recompute, then momentum-blend into lam."""
        self.eta = np.array([entropy_weight(p) for p in all_preds])
        new_lam = normalize_weights(self.eta)
        self.lam = momentum_update_weights(self.lam, new_lam, n_pseudo, n_total)
        self.epoch += 1
        self.snapshot()

    def snapshot(self) -> None:
        for i, (e, l) in enumerate(zip(self.eta, self.lam)):
            self.history.append((self.epoch, i, float(e), float(l)))
