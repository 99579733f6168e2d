"""Pure-numpy reference kernels.

Every function works on 2-D C-contiguous float64 arrays whose last axis is
the normalisation / softmax axis. The Cython module ``_kernels`` exposes the
same names and signatures.
"""

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def gelu_forward(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_backward(x, g):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return g * (cdf + x * pdf)


def layernorm_forward(x, gamma, beta, eps):
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0]


def layernorm_backward(g, xhat, rstd, gamma):
    n = xhat.shape[1]
    ggamma = (g * xhat).sum(axis=0)
    gbeta = g.sum(axis=0)
    gx_hat = g * gamma
    a = gx_hat.sum(axis=1, keepdims=True)
    b = (gx_hat * xhat).sum(axis=1, keepdims=True)
    gx = (gx_hat - a / n - xhat * (b / n)) * rstd[:, None]
    return gx, ggamma, gbeta


def softmax_forward(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(y, g):
    dot = (g * y).sum(axis=1, keepdims=True)
    return y * (g - dot)
