"""Differentiable primitives with hand-derived backward passes.

Every forward returns ``(out, cache)``; the matching ``*_backward`` takes the
upstream gradient and the cache, accumulates into any :class:`Param` it was
given, and returns gradients for the non-parameter inputs. Composite models
chain these by hand; there is no tape.

All math is float64. Arrays are plain numpy 2-D arrays (rows x cols).
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import kernels

DEFAULT_DROPOUT = 0.1


class DimensionError(ValueError):
    pass


class EmptySetError(ValueError):
    pass


class ParameterError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


@dataclass
class Param:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise DimensionError(
                f"grad shape {self.grad.shape} != value shape {self.value.shape} for {self.name}"
            )

    @property
    def shape(self):
        return self.value.shape


class ParamStore:
    """Named learnable tensors with paired gradient buffers."""

    def __init__(self):
        self._params: OrderedDict[str, Param] = OrderedDict()
        self.flat_value = None
        self.flat_grad = None

    def add(self, name, value):
        if self.flat_value is not None:
            raise RuntimeError("store is already flattened")
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Param(name, np.array(value, dtype=np.float64))
        self._params[name] = p
        return p

    def __getitem__(self, name) -> Param:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def flatten(self):
        """Re-home every value and grad as a view into one contiguous buffer.

        Values must afterwards only be modified in place.
        """
        if self.flat_value is not None:
            return self
        total = self.n_params()
        self.flat_value = np.empty(total)
        self.flat_grad = np.zeros(total)
        i = 0
        for p in self._params.values():
            k = p.value.size
            self.flat_value[i:i + k] = p.value.reshape(-1)
            p.value = self.flat_value[i:i + k].reshape(p.value.shape)
            p.grad = self.flat_grad[i:i + k].reshape(p.value.shape)
            i += k
        return self

    def zero_grad(self):
        if self.flat_grad is not None:
            self.flat_grad.fill(0.0)
            return
        for p in self._params.values():
            p.grad.fill(0.0)

    def n_params(self):
        return sum(p.value.size for p in self._params.values())

    def copy(self):
        out = ParamStore()
        for p in self._params.values():
            out.add(p.name, p.value.copy())
        return out.flatten() if self.flat_value is not None else out


def check_finite(x, what="input"):
    if not np.isfinite(x).all():
        raise NumericError(f"non-finite values in {what}")


def _as2d(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DimensionError(f"expected a 2-D tensor, got shape {x.shape}")
    return x


# -- linear --------------------------------------------------------------------


def linear(x, w: Param, b: Param):
    x = _as2d(x)
    if x.shape[1] != w.value.shape[0] or b.value.size != w.value.shape[1]:
        raise DimensionError(
            f"linear: x {x.shape} incompatible with w {w.value.shape} / b {b.value.shape}"
        )
    check_finite(x, f"linear input to {w.name}")
    return x @ w.value + b.value.reshape(1, -1), (x, w, b)


def linear_backward(dout, cache):
    x, w, b = cache
    w.grad += x.T @ dout
    b.grad += dout.sum(axis=0).reshape(b.grad.shape)
    return dout @ w.value.T


# -- relu ----------------------------------------------------------------------


def relu(x):
    x = np.asarray(x, dtype=np.float64)
    mask = x > 0
    return np.where(mask, x, 0.0), mask


def relu_backward(dout, mask):
    # subgradient at exactly 0 is 0
    return dout * mask


# -- jaccard affinity ----------------------------------------------------------


def cross_affinity(a, b):
    """Rectangular Jaccard vector similarity, W(i, j) = JVS(a_i, b_j)."""
    a = np.ascontiguousarray(_as2d(a))
    b = np.ascontiguousarray(_as2d(b))
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"cross_affinity: {a.shape} vs {b.shape}")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise EmptySetError("cross_affinity needs at least one row on each side")
    w, denom = kernels.cross_jaccard_forward(a, b)
    return w, (a, b, w, denom)


def cross_affinity_backward(dw, cache):
    a, b, w, denom = cache
    return kernels.cross_jaccard_backward(np.ascontiguousarray(dw), a, b, w, denom)


def jaccard_affinity(r):
    """n x n affinity 2 r_i.r_j / (r_i.r_i + r_j.r_j + 1e-8); symmetric, in [-1, 1]."""
    r = np.ascontiguousarray(_as2d(r))
    check_finite(r, "jaccard_affinity input")
    w, cache = cross_affinity(r, r)
    return w, cache


def jaccard_affinity_backward(dw, cache):
    da, db = cross_affinity_backward(dw, cache)
    return da + db


# -- layer norm ----------------------------------------------------------------


def layer_norm(x, gain: Param, shift: Param):
    x = np.ascontiguousarray(_as2d(x))
    if x.shape[1] != gain.value.size or x.shape[1] != shift.value.size:
        raise DimensionError(f"layer_norm: x {x.shape} vs gain {gain.value.shape}")
    out, xhat, inv = kernels.layer_norm_forward(
        x, gain.value.reshape(-1), shift.value.reshape(-1)
    )
    return out, (xhat, inv, gain, shift)


def layer_norm_backward(dout, cache):
    xhat, inv, gain, shift = cache
    dx, dgain, dshift = kernels.layer_norm_backward(
        np.ascontiguousarray(dout), xhat, inv, gain.value.reshape(-1)
    )
    gain.grad += dgain.reshape(gain.grad.shape)
    shift.grad += dshift.reshape(shift.grad.shape)
    return dx


# -- dropout -------------------------------------------------------------------


def dropout(x, p=DEFAULT_DROPOUT, train=False, rng=None):
    """Inverted dropout. In eval mode the input object itself is returned."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x, None
    if rng is None:
        raise ParameterError("train-mode dropout needs a seeded rng")
    mask = (rng.random(np.shape(x)) >= p) / (1.0 - p)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


# -- softmax -------------------------------------------------------------------


def softmax_rows(x):
    x = _as2d(x)
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    return y, y


def softmax_rows_backward(dy, y):
    return y * (dy - (dy * y).sum(axis=1, keepdims=True))


# -- bilinear ------------------------------------------------------------------


def bilinear_form(h, w: Param, o):
    """out[m, k] = sum_ij h[i] W[i, j, k] o[m, j]."""
    h = np.ascontiguousarray(_as2d(h))
    o = np.ascontiguousarray(_as2d(o))
    d = w.value.shape[0]
    if w.value.ndim != 3 or w.value.shape != (d, d, d) or h.shape != (1, d) or o.shape[1] != d:
        raise DimensionError(
            f"bilinear_form: h {h.shape}, W_b {w.value.shape}, o {o.shape}"
        )
    check_finite(h, "bilinear_form h")
    check_finite(o, "bilinear_form o")
    hv = h[0]
    out, t = kernels.bilinear_forward(hv, w.value, o)
    return out, (hv, w, o, t)


def bilinear_form_backward(dout, cache):
    hv, w, o, t = cache
    dh, dw, do = kernels.bilinear_backward(np.ascontiguousarray(dout), hv, w.value, o, t)
    w.grad += dw
    return dh[None, :], do


# -- set pooling ---------------------------------------------------------------


def max_pool_set(x):
    x = np.ascontiguousarray(_as2d(x))
    if x.shape[0] == 0:
        raise EmptySetError("max_pool_set over an empty set")
    out, idx = kernels.max_pool_forward(x)
    return out[None, :], (idx, x.shape[0])


def max_pool_set_backward(dout, cache):
    idx, n = cache
    return kernels.max_pool_backward(np.ascontiguousarray(dout).reshape(-1), idx, n)


def mean_pool_set(x):
    x = _as2d(x)
    if x.shape[0] == 0:
        raise EmptySetError("mean_pool_set over an empty set")
    return x.mean(axis=0, keepdims=True), x.shape[0]


def mean_pool_set_backward(dout, n):
    return np.repeat(dout.reshape(1, -1) / n, n, axis=0)


def pool(x, kind):
    if kind == "max":
        return max_pool_set(x)
    if kind == "mean":
        return mean_pool_set(x)
    raise ParameterError(f"unknown pooling {kind!r}")


def pool_backward(dout, cache, kind):
    if kind == "max":
        return max_pool_set_backward(dout, cache)
    return mean_pool_set_backward(dout, cache)


# -- gradient check ------------------------------------------------------------


def _rel_err(g_fd, g_an):
    return abs(g_fd - g_an) / max(1e-8, abs(g_fd) + abs(g_an))


def grad_check(closure, params: ParamStore, h=1e-5, per_param=None, rng=None, steps=None,
               value=None):
    """Max relative error between analytic and central-difference gradients.

    ``closure(params)`` must return a scalar and, as a side effect, accumulate
    its analytic gradient into ``params``. The closure has to be
    deterministic (dropout off or a fixed mask). ``value`` is an optional
    forward-only twin used for the perturbed evaluations.

    ``per_param`` limits the check to that many randomly chosen coordinates
    of each tensor (drawn from ``rng``); ``None`` checks every coordinate.

    ``steps`` is a ladder of step sizes (default ``(h,)``); each coordinate
    keeps its best agreement over the ladder. A step that straddles a ReLU
    kink or a max-pool switch fails on its own, a wrong gradient fails at
    every step.
    """
    steps = tuple(steps or (h,))
    value = value or closure
    params.zero_grad()
    f0 = closure(params)
    if not np.isfinite(f0):
        raise NumericError("closure returned a non-finite value")
    analytic = {p.name: p.grad.copy() for p in params}
    worst = 0.0
    for p in params:
        if not np.isfinite(analytic[p.name]).all():
            raise NumericError(f"non-finite analytic gradient for {p.name}")
        flat = p.value.reshape(-1)
        coords = range(flat.size)
        if per_param is not None and flat.size > per_param:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, per_param, replace=False)
        g_an = analytic[p.name].reshape(-1)
        for i in coords:
            orig = flat[i]
            err = np.inf
            for hs in steps:
                flat[i] = orig + hs
                fp = value(params)
                flat[i] = orig - hs
                fm = value(params)
                flat[i] = orig
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise NumericError(f"non-finite value while perturbing {p.name}[{i}]")
                err = min(err, _rel_err((fp - fm) / (2.0 * hs), g_an[i]))
                if err <= 1e-7:
                    break
            worst = max(worst, err)
    params.zero_grad()
    return worst


def directional_grad_check(closure, params: ParamStore, rng, h=1e-5, value=None, steps=None):
    """Like :func:`grad_check` but probes one random unit direction per tensor.

    Compares the central difference of ``value`` (defaults to ``closure``)
    along the direction with the analytic directional derivative. Two
    evaluations per tensor and step instead of two per coordinate; a wrong
    gradient in any tensor shows up with probability one. Returns the worst
    error and the name of the tensor it came from.
    """
    steps = tuple(steps or (h,))
    value = value or closure
    params.zero_grad()
    f0 = closure(params)
    if not np.isfinite(f0):
        raise NumericError("closure returned a non-finite value")
    worst = 0.0
    worst_name = None
    for p in params:
        g = p.grad.copy()
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite analytic gradient for {p.name}")
        u = rng.normal(size=p.value.shape)
        u /= np.linalg.norm(u) or 1.0
        g_an = float(np.vdot(g, u))
        orig = p.value.copy()
        err = np.inf
        for hs in steps:
            p.value[...] = orig + hs * u
            fp = value(params)
            p.value[...] = orig - hs * u
            fm = value(params)
            p.value[...] = orig
            err = min(err, _rel_err((fp - fm) / (2.0 * hs), g_an))
            if err <= 1e-7:
                break
        if err > worst:
            worst, worst_name = err, p.name
    params.zero_grad()
    return worst, worst_name
