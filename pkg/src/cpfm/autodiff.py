"""Define-by-run reverse-mode automatic differentiation over float64 arrays.

A :class:`Tensor` wraps a numpy array and, when gradients are enabled,
remembers the tensors it was computed from plus a closure that routes an
upstream gradient back to them. :func:`backward` topologically sorts that
graph from a scalar loss and accumulates gradients by sum, so tensors used
several times receive the sum of their contributions.

The graph is rebuilt on every forward pass. Matrix products, softmax and
row normalization go through the selected kernel backend; elementwise math
stays in numpy (identical in both backends).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from . import backend
from .errors import ContractError, DimensionError

LAYERNORM_EPS = 1e-5

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense float64 tensor with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def tanh(self):
        return tanh(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        np.add(t.grad, g, out=t.grad)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor):
    """Populate .grad on every requires_grad tensor reachable from loss."""
    if loss.data.size != 1:
        raise ContractError("backward requires a scalar loss")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


# -- elementwise ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), back)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: _accum(a, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), back)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _node(t, (a,), lambda g: _accum(a, g * (1.0 - t * t)))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: _accum(a, g / a.data))


# -- reductions -----------------------------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _node(out, (a,), back)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.shape[ax]

    def back(g):
        g = np.asarray(g) / count
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _node(out, (a,), back)


# -- linear algebra -------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    K = backend.active
    if a.ndim == 2 and b.ndim == 2:
        out = K.matmul(a.data, b.data)

        def back(g):
            _accum(a, K.matmul(g, b.data.T))
            _accum(b, K.matmul(a.data.T, g))

    elif a.ndim == 3 and b.ndim == 2:
        bsz, m, kdim = a.shape
        out = K.matmul(a.data.reshape(bsz * m, kdim), b.data).reshape(bsz, m, -1)

        def back(g):
            gf = g.reshape(bsz * m, -1)
            _accum(a, K.matmul(gf, b.data.T).reshape(a.shape))
            _accum(b, K.matmul(a.data.reshape(bsz * m, kdim).T, gf))

    elif a.ndim == 3 and b.ndim == 3:
        out = K.bmm(a.data, b.data)

        def back(g):
            _accum(a, K.bmm(g, b.data.swapaxes(-1, -2)))
            _accum(b, K.bmm(a.data.swapaxes(-1, -2), g))

    else:
        raise DimensionError(
            f"unsupported matmul ranks {a.ndim} @ {b.ndim}"
        )
    return _node(out, (a, b), back)


# -- shape manipulation ----------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return _node(out, (a,), lambda g: _accum(a, g.reshape(a.shape)))


def swapaxes(a, ax1, ax2) -> Tensor:
    a = as_tensor(a)
    out = np.ascontiguousarray(a.data.swapaxes(ax1, ax2))
    return _node(out, (a,), lambda g: _accum(a, g.swapaxes(ax1, ax2)))


def narrow(a, axis, start, length) -> Tensor:
    """Slice `length` entries from `start` along `axis`."""
    a = as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = np.ascontiguousarray(a.data[idx])

    def back(g):
        full = np.zeros(a.shape)
        full[idx] = g
        _accum(a, full)

    return _node(out, (a,), back)


def expand_leading(a, n: int) -> Tensor:
    """Repeat a tensor along a new leading axis; gradient sums it back."""
    a = as_tensor(a)
    out = np.broadcast_to(a.data, (n,) + a.shape).copy()
    return _node(out, (a,), lambda g: _accum(a, g.sum(axis=0)))


def concat(tensors: Iterable, axis: int) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ContractError("concat requires at least one tensor")
    ref = parts[0].shape
    ax = axis if axis >= 0 else len(ref) + axis
    for p in parts:
        if p.ndim != len(ref) or any(
            i != ax and p.shape[i] != ref[i] for i in range(len(ref))
        ):
            raise DimensionError(
                f"concat shapes incompatible along axis {axis}: "
                f"{[tuple(p.shape) for p in parts]}"
            )
    out = np.concatenate([p.data for p in parts], axis=ax)
    sizes = [p.shape[ax] for p in parts]

    def back(g):
        offset = 0
        for p, s in zip(parts, sizes):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(offset, offset + s)
            _accum(p, g[tuple(idx)])
            offset += s

    return _node(out, tuple(parts), back)


def concat_seq(p, h) -> Tensor:
    """Prepend prompt rows to token rows along the sequence axis."""
    p, h = as_tensor(p), as_tensor(h)
    if p.ndim < 2 or h.ndim < 2 or p.shape[-1] != h.shape[-1]:
        raise DimensionError(
            f"concat_seq trailing dims must match, got {p.shape} and {h.shape}"
        )
    return concat([p, h], axis=-2)


# -- normalization ---------------------------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    ax = axis if axis >= 0 else a.ndim + axis
    if not 0 <= ax < a.ndim:
        raise DimensionError(f"softmax axis {axis} out of range for rank {a.ndim}")
    K = backend.active
    moved = np.ascontiguousarray(np.moveaxis(a.data, ax, -1))
    y = K.softmax_lastaxis(moved)
    out = np.moveaxis(y, -1, ax)

    def back(g):
        gm = np.ascontiguousarray(np.moveaxis(g, ax, -1))
        gx = K.softmax_lastaxis_grad(y, gm)
        _accum(a, np.moveaxis(gx, -1, ax))

    return _node(np.ascontiguousarray(out), (a,), back)


def normalize_rows(a) -> Tensor:
    """Zero-mean unit-variance rows over the last axis (eps-guarded)."""
    a = as_tensor(a)
    K = backend.active
    xhat, rstd, active = K.layernorm_lastaxis(a.data, LAYERNORM_EPS)

    def back(g):
        _accum(a, K.layernorm_lastaxis_grad(xhat, rstd, active, g))

    return _node(xhat, (a,), back)


def layernorm_nobias(x, gain) -> Tensor:
    """Row layer norm followed by a learnable gain; no additive bias exists."""
    x, gain = as_tensor(x), as_tensor(gain)
    if gain.shape != (x.shape[-1],):
        raise DimensionError(
            f"gain shape {gain.shape} does not match last dim {x.shape[-1]}"
        )
    return mul(normalize_rows(x), gain)


def mean_squared_error(a, b) -> Tensor:
    d = sub(a, b)
    return tmean(mul(d, d))


# -- verification ----------------------------------------------------------

def grad_check(f, x, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per coordinate is |analytic - numeric| / max(1, |numeric|).
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    probe = Tensor(x0.copy(), requires_grad=True)
    loss = f(probe)
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ContractError("grad_check requires a scalar-valued function")
    backward(loss)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(x0)

    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    nflat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f(Tensor(x0.copy())).item()
            flat[i] = orig - step
            lo = f(Tensor(x0.copy())).item()
            flat[i] = orig
            nflat[i] = (hi - lo) / (2.0 * step)

    denom = np.maximum(1.0, np.abs(numeric))
    rel = np.abs(analytic - numeric) / denom
    return float(rel.max()) if rel.size else 0.0
