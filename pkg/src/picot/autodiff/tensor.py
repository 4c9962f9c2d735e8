"""Reverse-mode differentiation over dense float64 numpy arrays.

Every primitive returns a new :class:`Tensor` and, when any input requires a
gradient, records its parents and a backward rule. Recording order is a valid
topological order, so :meth:`Tensor.backward` replays nodes by descending
sequence number.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager

import numpy as np

from picot import kernels

_seq = itertools.count()
_state = threading.local()


class NonFinite(ArithmeticError):
    """A primitive produced NaN or Inf."""


class ShapeMismatch(ValueError):
    pass


class NotScalar(ValueError):
    pass


def _grad_enabled():
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None
        self._seq = next(_seq)

    # -- introspection -------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operators -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return mul(self, pow_const(as_tensor(other), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    # -- differentiation -----------------------------------------------------
    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires it."""
        if grad is None:
            if self.data.size != 1:
                raise NotScalar(f"backward() needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return

        nodes = []
        seen = set()
        stack = [self]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(p for p in t._parents if p.requires_grad)
        nodes.sort(key=lambda t: t._seq, reverse=True)

        grads = {id(self): grad}
        for node in nodes:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if not np.all(np.isfinite(pg)):
                    raise NonFinite("non-finite gradient during backward")
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    if not np.all(np.isfinite(data)):
        raise NonFinite(f"{op} produced a non-finite value")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._seq = next(_seq)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: {a.shape} vs {b.shape}") from None


# -- elementwise ---------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def scale(a, c):
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def pow_const(a, p):
    ad = a.data
    return _make(ad**p, (a,), lambda g: (g * p * ad ** (p - 1),), "pow")


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    ad = a.data
    if np.any(ad <= 0):
        raise NonFinite("log of a non-positive value")
    return _make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a):
    if np.any(a.data < 0):
        raise NonFinite("sqrt of a negative value")
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def sigmoid(a):
    out = 1.0 / (1.0 + np.exp(-np.clip(a.data, -500, 500)))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def gelu(a):
    ad = a.data
    return _make(kernels.gelu_forward(ad), (a,), lambda g: (kernels.gelu_backward(ad, g),), "gelu")


# -- reductions ------------------------------------------------------------------


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), back, "sum")


def mean(a, axis=None, keepdims=False):
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def logsumexp(a):
    """log(sum(exp(a))) over all elements, stabilized by the maximum."""
    ad = a.data
    m = ad.max()
    e = np.exp(ad - m)
    s = e.sum()
    return _make(np.asarray(m + np.log(s)), (a,), lambda g: (g * e / s,), "logsumexp")


# -- linear algebra and shape ------------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    ad = a.data if a.ndim > 1 else a.data[None, :]
    bd = b.data if b.ndim > 1 else b.data[:, None]
    out = ad @ bd

    def back(g):
        g = g.reshape(out.shape)
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2 and ad.ndim > 2:
            # shared weight: fold the batch axes into one product
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape).reshape(a.shape), _unbroadcast(gb, bd.shape).reshape(b.shape)

    res = out
    if a.ndim == 1:
        res = res[..., 0, :]
    if b.ndim == 1:
        res = res[..., 0]
    return _make(res, (a, b), back, "matmul")


def reshape(a, shape):
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes):
    inv = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def index(a, idx):
    """Fancy-index ``a.data[idx]``; backward scatters with accumulation."""
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(np.array(a.data[idx]), (a,), back, "index")


def slice_row(a, i):
    if a.ndim != 2:
        raise ShapeMismatch(f"slice_row needs a matrix, got {a.shape}")
    return index(a, int(i))


def concat_rows(parts):
    """Stack 1-D tensors (as rows) or 2-D blocks along axis 0."""
    parts = [as_tensor(p) for p in parts]
    blocks = [p.data[None, :] if p.ndim == 1 else p.data for p in parts]
    if len({b.shape[1:] for b in blocks}) > 1:
        raise ShapeMismatch("concat_rows: inconsistent row shapes")
    bounds = np.cumsum([0] + [b.shape[0] for b in blocks])

    def back(g):
        return tuple(g[bounds[k]:bounds[k + 1]].reshape(p.shape) for k, p in enumerate(parts))

    return _make(np.concatenate(blocks, axis=0), parts, back, "concat_rows")


def embedding_lookup(table, ids):
    ids = np.asarray(ids, dtype=np.int64)
    n_rows, dim = table.shape
    if ids.size and (ids.min() < 0 or ids.max() >= n_rows):
        raise ShapeMismatch("embedding_lookup: id out of range")

    def back(g):
        return (kernels.scatter_add_rows(ids.reshape(-1), g.reshape(-1, dim), n_rows),)

    return _make(table.data[ids], (table,), back, "embedding_lookup")


# -- normalization and activations --------------------------------------------------


def softmax(a):
    """Softmax over the last axis."""
    shape = a.shape
    y = kernels.softmax_rows(a.data.reshape(-1, shape[-1]))

    def back(g):
        return (kernels.softmax_rows_backward(y, g.reshape(y.shape)).reshape(shape),)

    return _make(y.reshape(shape), (a,), back, "softmax")


def layer_norm(x, gamma, beta, eps=1e-5):
    shape = x.shape
    d = shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeMismatch("layer_norm: gain/bias must match the last axis")
    y, xhat, rstd = kernels.layer_norm_forward(x.data.reshape(-1, d), gamma.data, beta.data, eps)

    def back(g):
        gx, gg, gb = kernels.layer_norm_backward(g.reshape(-1, d), xhat, rstd, gamma.data)
        return gx.reshape(shape), gg, gb

    return _make(y.reshape(shape), (x, gamma, beta), back, "layer_norm")


# -- distances and losses -----------------------------------------------------------

L2_EPS = 1e-12


def l2_distance(a, b, eps=L2_EPS):
    """sqrt(sum((a - b)^2) + eps); eps keeps the gradient bounded at a == b."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"l2_distance: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    out = np.sqrt(np.sum(diff * diff) + eps)

    def back(g):
        ga = g * diff / out
        return ga, -ga

    return _make(np.asarray(out), (a, b), back, "l2_distance")


def pairwise_l2(h, eps=L2_EPS):
    """All-pairs l2_distance between the rows of ``h``; diagonal is sqrt(eps)."""
    if h.ndim != 2:
        raise ShapeMismatch(f"pairwise_l2 needs a matrix, got {h.shape}")
    hd = h.data
    dist = kernels.pairwise_l2(hd, eps)
    return _make(dist, (h,), lambda g: (kernels.pairwise_l2_backward(hd, dist, g),), "pairwise_l2")


def bce_with_logits(z, y):
    """Mean over elements of max(z,0) - z*y + log(1 + exp(-|z|))."""
    y = np.asarray(y, dtype=np.float64)
    if z.shape != y.shape:
        raise ShapeMismatch(f"bce_with_logits: {z.shape} vs {y.shape}")
    zd = z.data
    per = np.maximum(zd, 0.0) - zd * y + np.log1p(np.exp(-np.abs(zd)))
    n = float(zd.size)

    def back(g):
        sig = 1.0 / (1.0 + np.exp(-zd))
        return (g * (sig - y) / n,)

    return _make(np.asarray(per.sum() / n), (z,), back, "bce_with_logits")


def dropout(x, rate, rng):
    if rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(keep))
