"""Reference numpy implementations of the hot kernels.

This module is the pure-Python fallback for the compiled extension in
``_ckernels.pyx``; both expose the same functions over float64 arrays.
"""

import numpy as np

NAME = "python"


def matmul(a, b):
    """2-D matrix product (also used after folding batch dims)."""
    return a @ b


def bmm(a, b):
    """Batched matrix product, (B,m,k) @ (B,k,n) -> (B,m,n)."""
    return a @ b


def softmax_lastaxis(x):
    """Row softmax over the last axis with subtract-max stabilization."""
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_lastaxis_grad(y, gy):
    """Backward of softmax_lastaxis given its output y and upstream gy."""
    dot = (y * gy).sum(axis=-1, keepdims=True)
    return y * (gy - dot)


def layernorm_lastaxis(x, eps):
    """Normalize rows to zero mean / unit variance (population), no gain.

    The standard deviation is floored at eps, so near-constant rows map to
    ~zero instead of exploding while ordinary rows normalize exactly.
    Returns (xhat, rstd, active); active marks rows where the variance
    participates in the gradient (guard not engaged).
    """
    mu = x.mean(axis=-1, keepdims=True)
    d = x - mu
    var = (d * d).mean(axis=-1, keepdims=True)
    std = np.sqrt(var)
    active = (std > eps).astype(np.float64)
    rstd = 1.0 / np.maximum(std, eps)
    return d * rstd, rstd, active


def layernorm_lastaxis_grad(xhat, rstd, active, gy):
    """Backward of layernorm_lastaxis; exact on both sides of the guard."""
    gmean = gy.mean(axis=-1, keepdims=True)
    proj = (gy * xhat).mean(axis=-1, keepdims=True)
    return rstd * (gy - gmean - active * xhat * proj)
