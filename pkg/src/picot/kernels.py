"""Kernel backend selection.

The compiled extension is used when importable; ``PICOT_PURE_PYTHON=1`` forces
the numpy fallback. Both expose identical functions.
"""

import os

import numpy as np

from picot import _kernels_py

if os.environ.get("PICOT_PURE_PYTHON") == "1":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from picot import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def pairwise_l2(h, eps):
    return _impl.pairwise_l2(_c(h), float(eps))


def pairwise_l2_backward(h, dist, gdist):
    return _impl.pairwise_l2_backward(_c(h), _c(dist), _c(gdist))


def layer_norm_forward(x, gamma, beta, eps):
    return _impl.layer_norm_forward(_c(x), _c(gamma), _c(beta), float(eps))


def layer_norm_backward(gy, xhat, rstd, gamma):
    return _impl.layer_norm_backward(_c(gy), _c(xhat), _c(rstd), _c(gamma))


def gelu_forward(x):
    return _impl.gelu_forward(x)


def gelu_backward(x, gy):
    return _impl.gelu_backward(x, gy)


def softmax_rows(x):
    return _impl.softmax_rows(_c(x))


def softmax_rows_backward(y, gy):
    return _impl.softmax_rows_backward(_c(y), _c(gy))


def scatter_add_rows(ids, rows, n_rows):
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    return _impl.scatter_add_rows(ids, _c(rows), int(n_rows))
