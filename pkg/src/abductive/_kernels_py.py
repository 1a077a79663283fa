"""Pure numpy fallback for the hot kernels.

Every function here has a twin with the same signature in ``_kernels.pyx``.
The two are checked against each other in the test-suite, so any change in
one must be mirrored in the other.
"""

import numpy as np

JVS_EPS = 1e-8
LN_EPS = 1e-5


def cross_jaccard_forward(a, b):
    """Jaccard vector similarity between every row of ``a`` and every row of ``b``.

    Returns the m x n affinity together with the denominators, which the
    backward pass reuses.
    """
    g = a @ b.T
    sa = np.einsum("ij,ij->i", a, a)
    sb = np.einsum("ij,ij->i", b, b)
    denom = sa[:, None] + sb[None, :] + JVS_EPS
    return 2.0 * g / denom, denom


def cross_jaccard_backward(dw, a, b, w, denom):
    dg = 2.0 * dw / denom
    dd = -w * dw / denom
    da = dg @ b + 2.0 * dd.sum(axis=1)[:, None] * a
    db = dg.T @ a + 2.0 * dd.sum(axis=0)[:, None] * b
    return da, db


def bilinear_forward(h, w, o):
    # t[j, k] = sum_i h[i] w[i, j, k]
    t = np.tensordot(h, w, axes=(0, 0))
    return o @ t, t


def bilinear_backward(dout, h, w, o, t):
    dt = o.T @ dout
    dh = np.tensordot(w, dt, axes=([1, 2], [0, 1]))
    dw = np.multiply.outer(h, dt)
    do = dout @ t.T
    return dh, dw, do


def max_pool_forward(x):
    idx = np.argmax(x, axis=0)
    return x[idx, np.arange(x.shape[1])], idx


def max_pool_backward(dout, idx, n):
    dx = np.zeros((n, dout.shape[0]))
    dx[idx, np.arange(dout.shape[0])] = dout
    return dx


def layer_norm_forward(x, gain, shift):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * gain + shift, xhat, inv[:, 0]


def layer_norm_backward(dout, xhat, inv, gain):
    d = xhat.shape[1]
    dxhat = dout * gain
    dx = (inv[:, None] / d) * (
        d * dxhat
        - dxhat.sum(axis=1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
    )
    dgain = (dout * xhat).sum(axis=0)
    dshift = dout.sum(axis=0)
    return dx, dgain, dshift
