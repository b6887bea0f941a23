"""Bias-corrected Adam over autodiff tensors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Tensor
from .errors import ContractError


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    @classmethod
    def for_param(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param))


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              states: Sequence[AdamState], lr: float,
              betas: tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8) -> bool:
    """Update params in place; returns False (no update) on non-finite grads."""
    if len(params) != len(grads) or len(params) != len(states):
        raise ContractError("params, grads and states must align")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ContractError(f"grad shape {g.shape} != param shape {p.shape}")
    for g in grads:
        if not np.isfinite(g).all():
            return False
    b1, b2 = betas
    for p, g, s in zip(params, grads, states):
        s.step_count += 1
        s.first_moment *= b1
        s.first_moment += (1.0 - b1) * g
        s.second_moment *= b2
        s.second_moment += (1.0 - b2) * (g * g)
        m_hat = s.first_moment / (1.0 - b1 ** s.step_count)
        v_hat = s.second_moment / (1.0 - b2 ** s.step_count)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return True


class Adam:
    """Keeps one AdamState per registered tensor; can step a subset.

    Tensors whose grad is None in a step are left untouched (their
    step_count does not advance), so shared parameters updated from two
    branches keep one coherent state.
    """

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self._states = {id(p): AdamState.for_param(p.data) for p in self.params}

    def state_for(self, param: Tensor) -> AdamState:
        return self._states[id(param)]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, subset: Iterable[Tensor] | None = None) -> bool:
        targets = self.params if subset is None else list(subset)
        live = [p for p in targets if p.grad is not None]
        for p in live:
            if id(p) not in self._states:
                raise ContractError("step() received an unregistered tensor")
        return adam_step(
            [p.data for p in live],
            [p.grad for p in live],
            [self._states[id(p)] for p in live],
            self.lr, self.betas, self.eps,
        )
