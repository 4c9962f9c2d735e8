"""Pure numpy implementations of the hot kernels.

Same signatures as the compiled ``_kernels`` module; used when the extension
is unavailable or ``PICOT_PURE_PYTHON=1`` is set.
"""

import numpy as np

_GELU_C = 0.7978845608028654  # sqrt(2 / pi)
_GELU_A = 0.044715


def pairwise_l2(h, eps):
    diff = h[:, None, :] - h[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2) + eps)


def pairwise_l2_backward(h, dist, gdist):
    w = (gdist + gdist.T) / dist
    np.fill_diagonal(w, 0.0)  # d(dist_ii)/dh == 0; 1/sqrt(eps) would cancel badly
    # sum_j w_ij (h_i - h_j)
    return w.sum(axis=1)[:, None] * h - w @ h


def layer_norm_forward(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0]


def layer_norm_backward(gy, xhat, rstd, gamma):
    n = xhat.shape[1]
    ggamma = (gy * xhat).sum(axis=0)
    gbeta = gy.sum(axis=0)
    gxhat = gy * gamma
    gx = (
        gxhat
        - gxhat.sum(axis=1, keepdims=True) / n
        - xhat * (gxhat * xhat).sum(axis=1, keepdims=True) / n
    ) * rstd[:, None]
    return gx, ggamma, gbeta


def gelu_forward(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x**3)))


def gelu_backward(x, gy):
    t = np.tanh(_GELU_C * (x + _GELU_A * x**3))
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return gy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def softmax_rows(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(y, gy):
    return y * (gy - (gy * y).sum(axis=1, keepdims=True))


def scatter_add_rows(ids, rows, n_rows):
    out = np.zeros((n_rows, rows.shape[1]))
    np.add.at(out, ids, rows)
    return out
