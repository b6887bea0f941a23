"""Adaptation losses: soft-label distillation, prompt and input reconstruction.

All losses return scalar autodiff tensors so one backward pass covers the
weighted objective. Teacher labels and masks enter as constants; gradients
flow through model outputs, prompts, heads and the prompt autoencoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, log, matmul, tanh, tmean, tsum
from .errors import ConfigError, ContractError
from .rng import SplitMix64

CE_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Trade-off constants of the total objective."""

    prompt_recon: float = 0.1
    input_recon: float = 1.0
    masked_fraction: float = 0.5  # pi: weight of the masked term inside L_IR

    def __post_init__(self):
        if self.prompt_recon < 0 or self.input_recon < 0:
            raise ConfigError("loss weights must be non-negative")
        if not 0.0 <= self.masked_fraction <= 1.0:
            raise ConfigError("masked_fraction must lie in [0, 1]")


class PromptAutoencoder:
    """Linear down-projection plus a two-layer tanh up-projection.

    Shared across branches; the bottleneck forces prompts through a
    low-dimensional subspace.
    """

    def __init__(self, model_dim: int, seed: int,
                 bottleneck: int | None = None, hidden: int | None = None):
        d = model_dim
        db = bottleneck if bottleneck is not None else max(1, d // 4)
        dh = hidden if hidden is not None else max(1, d // 2)
        if db >= d and d > 1:
            raise ConfigError("bottleneck must be smaller than model_dim")
        rng = np.random.default_rng(seed)
        self.w1 = Tensor(rng.normal(0.0, 1.0 / math.sqrt(d), (d, db)))
        self.b1 = Tensor(np.zeros(db))
        self.w2 = Tensor(rng.normal(0.0, 1.0 / math.sqrt(db), (db, dh)))
        self.b2 = Tensor(np.zeros(dh))
        self.w3 = Tensor(rng.normal(0.0, 1.0 / math.sqrt(dh), (dh, d)))
        self.b3 = Tensor(np.zeros(d))

    def params(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def named_params(self) -> dict[str, Tensor]:
        return {f"ae.{n}": t for n, t in
                zip(("w1", "b1", "w2", "b2", "w3", "b3"), self.params())}


def prompt_autoencode(p: Tensor, ae: PromptAutoencoder) -> Tensor:
    """Row-wise reconstruct prompt tokens through the bottleneck."""
    down = matmul(p, ae.w1) + ae.b1
    hidden = tanh(matmul(down, ae.w2) + ae.b2)
    return matmul(hidden, ae.w3) + ae.b3


def loss_prompt_recon(pairs) -> Tensor:
    """Mean over (prompt, reconstruction) pairs of squared deviation norms."""
    pairs = list(pairs)
    if not pairs:
        raise ContractError("loss_prompt_recon needs at least one pair")
    total = None
    for p, p_hat in pairs:
        d = p_hat - p
        term = tsum(d * d)
        total = term if total is None else total + term
    return total * (1.0 / len(pairs))


def gen_mask(n: int, ratio: float, seed: int) -> np.ndarray:
    """Binary patch mask with exactly round(ratio*n) ones, seeded draw."""
    if not 0.0 <= ratio < 1.0:
        raise ContractError("mask ratio must lie in [0, 1)")
    ones = int(round(ratio * n))
    mask = np.zeros(n)
    if ones:
        rng = SplitMix64(seed)
        mask[rng.choice(n, ones)] = 1.0
    return mask


def expand_mask_to_steps(mask: np.ndarray, patch_len: int) -> np.ndarray:
    """Patch mask (N,) -> timestep mask (N*P,)."""
    return np.repeat(np.asarray(mask, dtype=np.float64), patch_len)


def loss_input_recon(x: Tensor, x_hat: Tensor, step_mask: np.ndarray,
                     masked_fraction: float) -> Tensor:
    """Masked/unmasked reconstruction error blend.

    Each term is the mean squared error over its own positions (all
    channels of a masked timestep count as masked); an empty region
    contributes zero.
    """
    if x.shape != x_hat.shape:
        raise ContractError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    m = np.asarray(step_mask, dtype=np.float64)
    t_axis = x.ndim - 2
    if m.shape[-1] != x.shape[t_axis]:
        raise ContractError("step mask length does not match series length")
    weights = m[..., None]  # broadcast over channels (and batch if present)
    diff = x_hat - x
    sq = diff * diff
    n_batch = x.shape[0] if x.ndim == 3 else 1
    channels = x.shape[-1]
    n_masked = float(m.sum()) * channels * (n_batch if m.ndim == 1 else 1)
    n_total = float(np.prod(x.shape))

    def region_mean(w, count):
        if count <= 0:
            return Tensor(0.0)
        return tsum(sq * Tensor(w)) * (1.0 / count)

    l_masked = region_mean(weights, n_masked)
    l_unmasked = region_mean(1.0 - weights, n_total - n_masked)
    return l_masked * masked_fraction + l_unmasked * (1.0 - masked_fraction)


def loss_ce_soft(probs: Tensor, targets: np.ndarray) -> Tensor:
    """Soft-label cross entropy, averaged over the batch when batched."""
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != probs.shape:
        raise ContractError(f"target shape {t.shape} != output shape {probs.shape}")
    per_element = Tensor(t) * log(probs + CE_EPS)
    if probs.ndim == 1:
        return -tsum(per_element)
    return -tmean(tsum(per_element, axis=-1))


def total_loss(ce: Tensor, pr: Tensor, ir: Tensor, weights: LossWeights) -> Tensor:
    return ce + pr * weights.prompt_recon + ir * weights.input_recon
