"""Patch-based transformer encoder with prompt injection into every MSA layer.

The backbone (patch projection, mask embedding, position table, attention
and feed-forward weights, layer-norm gains) is derived deterministically
from a seed and kept frozen; adaptation trains only prompts and heads.
Layer norms carry a gain but no additive bias, and each sublayer is
pre-normalized with the norm output feeding the residual branch.

Prompt injection concatenates the prompt rows ahead of the token rows
before the Q/K/V projections, so every attention head attends over
prompt_len + n_patches keys; the prompt rows are dropped again after the
output projection so the residual stream keeps its length (see README for
the rationale).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (Tensor, concat_seq, expand_leading, layernorm_nobias,
                       matmul, narrow, reshape, softmax, swapaxes, tanh, tmean)
from .errors import ConfigError, DimensionError

PROMPT_INIT_STD = 0.02
FF_MULT = 2


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture hyperparameters of the encoder stack."""

    series_len: int = 128
    channels: int = 3
    patch_len: int = 16
    model_dim: int = 64
    heads: int = 4
    layers: int = 2
    prompt_len: int = 4
    classes: int = 5
    mask_ratio: float = 0.3

    def __post_init__(self):
        if min(self.series_len, self.channels, self.patch_len,
               self.model_dim, self.heads, self.classes) < 1:
            raise ConfigError("encoder dimensions must be positive")
        if self.layers < 0 or self.prompt_len < 0:
            raise ConfigError("layers and prompt_len must be non-negative")
        if self.classes < 2:
            raise ConfigError("need at least two classes")
        if self.series_len % self.patch_len != 0:
            raise ConfigError(
                f"series_len {self.series_len} not divisible by patch_len {self.patch_len}"
            )
        if self.model_dim % self.heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by heads {self.heads}"
            )
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ConfigError("mask_ratio must lie in [0, 1)")

    @property
    def n_patches(self) -> int:
        return self.series_len // self.patch_len

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    @property
    def patch_values(self) -> int:
        return self.patch_len * self.channels


def layer_param_names(layer: int) -> list[str]:
    base = f"layer{layer}."
    return [base + n for n in (
        "attn_norm_gain", "wq", "wk", "wv", "wo",
        "ff_norm_gain", "ff_w1", "ff_w2",
    )]


def backbone_param_names(cfg: EncoderConfig) -> list[str]:
    names = ["patch_proj", "mask_embed", "pos_embed"]
    for i in range(cfg.layers):
        names.extend(layer_param_names(i))
    return names


def init_backbone(cfg: EncoderConfig, seed: int) -> dict[str, Tensor]:
    """Deterministic frozen backbone weights shared via the seed."""
    rng = np.random.default_rng(seed)
    d = cfg.model_dim
    params: dict[str, Tensor] = {}
    params["patch_proj"] = Tensor(
        rng.normal(0.0, 1.0 / math.sqrt(cfg.patch_values), (cfg.patch_values, d)))
    params["mask_embed"] = Tensor(rng.normal(0.0, PROMPT_INIT_STD, (d,)))
    params["pos_embed"] = Tensor(rng.normal(0.0, 0.5, (cfg.n_patches, d)))
    for i in range(cfg.layers):
        base = f"layer{i}."
        params[base + "attn_norm_gain"] = Tensor(np.ones(d))
        for w in ("wq", "wk", "wv", "wo"):
            params[base + w] = Tensor(rng.normal(0.0, 1.0 / math.sqrt(d), (d, d)))
        params[base + "ff_norm_gain"] = Tensor(np.ones(d))
        params[base + "ff_w1"] = Tensor(
            rng.normal(0.0, 1.0 / math.sqrt(d), (d, FF_MULT * d)))
        params[base + "ff_w2"] = Tensor(
            rng.normal(0.0, 1.0 / math.sqrt(FF_MULT * d), (FF_MULT * d, d)))
    return params


def init_prompt(cfg: EncoderConfig, seed: int) -> Tensor:
    rng = np.random.default_rng(seed)
    return Tensor(rng.normal(0.0, PROMPT_INIT_STD, (cfg.prompt_len, cfg.model_dim)))


def init_cls_head(cfg: EncoderConfig) -> tuple[Tensor, Tensor]:
    return (Tensor(np.zeros((cfg.model_dim, cfg.classes))),
            Tensor(np.zeros(cfg.classes)))


def init_recon_head(cfg: EncoderConfig, seed: int) -> tuple[Tensor, Tensor]:
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 1.0 / math.sqrt(cfg.model_dim),
                   (cfg.model_dim, cfg.patch_values))
    return Tensor(w), Tensor(np.zeros(cfg.patch_values))


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return reshape(x, (1,) + x.shape), True
    if x.ndim == 3:
        return x, False
    raise DimensionError(f"expected rank 2 or 3 input, got rank {x.ndim}")


def patchify(x: Tensor, cfg: EncoderConfig) -> Tensor:
    """(T, D) or (B, T, D) series -> (N, P*D) or (B, N, P*D) patch rows.

    Row layout is time-major: all channels of one timestep stay adjacent.
    """
    xb, squeeze = _batched(x)
    b, t, d = xb.shape
    if t != cfg.series_len or d != cfg.channels:
        raise ConfigError(f"series shape ({t},{d}) does not match config")
    rows = reshape(xb, (b, cfg.n_patches, cfg.patch_values))
    return reshape(rows, rows.shape[1:]) if squeeze else rows


def unpatchify(rows: Tensor, cfg: EncoderConfig) -> Tensor:
    """Inverse of patchify back to (.., T, D)."""
    squeeze = rows.ndim == 2
    rb = reshape(rows, (1,) + rows.shape) if squeeze else rows
    series = reshape(rb, (rb.shape[0], cfg.series_len, cfg.channels))
    return reshape(series, series.shape[1:]) if squeeze else series


def _as_mask(mask, n: int) -> np.ndarray:
    if mask is None:
        return np.zeros(n)
    m = np.asarray(mask, dtype=np.float64)
    if m.shape[-1] != n:
        raise DimensionError(f"mask length {m.shape[-1]} != n_patches {n}")
    return m


def embed_patches(patches: Tensor, mask, params: dict[str, Tensor],
                  cfg: EncoderConfig) -> Tensor:
    """Project patch rows to tokens; masked rows become the mask embedding."""
    m = _as_mask(mask, cfg.n_patches)
    proj = matmul(patches, params["patch_proj"])
    keep = Tensor((1.0 - m)[..., None])
    fill = Tensor(m[..., None])
    return proj * keep + params["mask_embed"] * fill


def prompted_msa(tokens: Tensor, prompt: Tensor | None,
                 weights: dict[str, Tensor], cfg: EncoderConfig) -> Tensor:
    """Multi-head self-attention with prompt rows prepended to Q, K and V.

    The raw attention output spans prompt_len + L rows; the leading prompt
    rows are discarded after the output projection so the caller sees L
    rows again.
    """
    tb, squeeze = _batched(tokens)
    b, length, d = tb.shape
    if d != cfg.model_dim:
        raise ConfigError(f"token dim {d} does not match model_dim {cfg.model_dim}")
    lp = 0
    z = tb
    if prompt is not None and prompt.shape[0] > 0:
        if prompt.shape[-1] != d:
            raise DimensionError("prompt dim does not match token dim")
        lp = prompt.shape[0]
        z = concat_seq(expand_leading(prompt, b), tb)
    s = lp + length

    q = matmul(z, weights["wq"])
    k = matmul(z, weights["wk"])
    v = matmul(z, weights["wv"])

    def split_heads(t: Tensor) -> Tensor:
        t = reshape(t, (b, s, cfg.heads, cfg.head_dim))
        t = swapaxes(t, 1, 2)
        return reshape(t, (b * cfg.heads, s, cfg.head_dim))

    qh, kh, vh = split_heads(q), split_heads(k), split_heads(v)
    scores = matmul(qh, swapaxes(kh, 1, 2)) * (1.0 / math.sqrt(cfg.head_dim))
    attn = softmax(scores, axis=-1)
    ctx = matmul(attn, vh)
    ctx = reshape(ctx, (b, cfg.heads, s, cfg.head_dim))
    ctx = reshape(swapaxes(ctx, 1, 2), (b, s, d))
    out = matmul(ctx, weights["wo"])
    if lp:
        out = narrow(out, 1, lp, length)
    return reshape(out, out.shape[1:]) if squeeze else out


def _layer_weights(params: dict[str, Tensor], layer: int) -> dict[str, Tensor]:
    base = f"layer{layer}."
    return {name: params[base + name]
            for name in ("attn_norm_gain", "wq", "wk", "wv", "wo",
                         "ff_norm_gain", "ff_w1", "ff_w2")}


def encode(x: Tensor, prompt: Tensor | None, mask,
           params: dict[str, Tensor], cfg: EncoderConfig) -> Tensor:
    """Full encoder stack: patchify, embed, then prompted pre-norm layers.

    The position table marks token order for attention, so it enters with
    the stack; a zero-layer stack is exactly the patch embedding.
    """
    xb, squeeze = _batched(x)
    tokens = embed_patches(patchify(xb, cfg), mask, params, cfg)
    if cfg.layers > 0:
        tokens = tokens + params["pos_embed"]
    for i in range(cfg.layers):
        w = _layer_weights(params, i)
        normed = layernorm_nobias(tokens, w["attn_norm_gain"])
        tokens = tokens + prompted_msa(normed, prompt, w, cfg)
        normed = layernorm_nobias(tokens, w["ff_norm_gain"])
        hidden = tanh(matmul(normed, w["ff_w1"]))
        tokens = tokens + matmul(hidden, w["ff_w2"])
    return reshape(tokens, tokens.shape[1:]) if squeeze else tokens


def classify_head(tokens: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Mean-pool token rows, then affine map to class logits."""
    pooled = tmean(tokens, axis=-2)
    if pooled.ndim == 1:
        return reshape(matmul(reshape(pooled, (1, -1)), w), (-1,)) + b
    return matmul(pooled, w) + b


def reconstruct_head(tokens: Tensor, w: Tensor, b: Tensor,
                     cfg: EncoderConfig) -> Tensor:
    """Per-token affine map back to patch values, un-patchified to a series."""
    rows = matmul(tokens, w) + b
    return unpatchify(rows, cfg)
