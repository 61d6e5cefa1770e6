"""Reverse-mode automatic differentiation over dense float64 arrays.

Small eager engine: every operation computes its forward value immediately,
checks it for NaN/Inf, and remembers how to push gradients to its parents.
Graphs are rebuilt per step; parameters are long-lived leaf tensors whose
``.grad`` accumulates until explicitly zeroed.

Supported primitives: add/sub/neg, elementwise mul, matmul (with numpy
broadcasting over stacked dimensions), tanh, relu, exp, log, sqrt, square,
abs, scalar scaling, axis sums and means, reshape, basic slicing, concat,
clamp, and a fused training/eval batch-norm. Dropout is expressed as
multiplication by a pre-sampled constant mask so replays are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels


class NonFiniteError(FloatingPointError):
    """A forward value contains NaN or Inf."""


def _check_finite(arr):
    # summing propagates NaN and +-Inf and is cheaper than isfinite().all()
    if not math.isfinite(float(arr.sum())):
        raise NonFiniteError("non-finite value produced in forward pass")


_GRAD_ENABLED = True


class no_grad:
    """Context manager that skips graph construction; forward values (and
    their finite checks) are computed exactly as usual."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """Node of the computation graph: a value plus an optional gradient."""

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.value)

    def backward(self, seed=None):
        """Accumulate d(seed . self)/d(leaf) into every reachable leaf's .grad."""
        if seed is None:
            seed = np.ones_like(self.value)
        else:
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != self.value.shape:
                raise ValueError(
                    f"seed shape {seed.shape} does not match output shape {self.value.shape}")
        self.grad = seed if self.grad is None else self.grad + seed
        for node in reversed(_topo_order(self)):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take_slice(self, key)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.value.shape}{tag})"


def _topo_order(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _coerce(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _acc(current, g):
    return g if current is None else current + g


def _result(value, parents, backward):
    value = np.asarray(value, dtype=np.float64)
    _check_finite(value)
    out = Tensor(value)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    """Sum a gradient back down to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _coerce(a), _coerce(b)
    val = a.value + b.value

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, _unbroadcast(g, a.value.shape))
        if b.requires_grad:
            b.grad = _acc(b.grad, _unbroadcast(g, b.value.shape))

    return _result(val, (a, b), bwd)


def sub(a, b):
    a, b = _coerce(a), _coerce(b)
    val = a.value - b.value

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, _unbroadcast(g, a.value.shape))
        if b.requires_grad:
            b.grad = _acc(b.grad, _unbroadcast(-g, b.value.shape))

    return _result(val, (a, b), bwd)


def neg(a):
    a = _coerce(a)

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, -g)

    return _result(-a.value, (a,), bwd)


def mul(a, b):
    a, b = _coerce(a), _coerce(b)
    val = a.value * b.value

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, _unbroadcast(g * b.value, a.value.shape))
        if b.requires_grad:
            b.grad = _acc(b.grad, _unbroadcast(g * a.value, b.value.shape))

    return _result(val, (a, b), bwd)


def matmul(a, b):
    a, b = _coerce(a), _coerce(b)
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise ValueError("matmul expects operands with at least 2 dimensions")
    val = a.value @ b.value

    def bwd(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.value, -1, -2)
            a.grad = _acc(a.grad, _unbroadcast(ga, a.value.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.value, -1, -2) @ g
            b.grad = _acc(b.grad, _unbroadcast(gb, b.value.shape))

    return _result(val, (a, b), bwd)


def tanh(a):
    a = _coerce(a)
    y = np.tanh(a.value)

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, kernels.tanh_bwd(g, y))

    return _result(y, (a,), bwd)


def relu(a):
    a = _coerce(a)
    mask = a.value > 0.0

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g * mask)

    return _result(np.where(mask, a.value, 0.0), (a,), bwd)


def exp(a):
    a = _coerce(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.value)

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g * y)

    return _result(y, (a,), bwd)


def log(a):
    a = _coerce(a)
    with np.errstate(invalid="ignore", divide="ignore"):
        y = np.log(a.value)

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g / a.value)

    return _result(y, (a,), bwd)


def sqrt(a):
    a = _coerce(a)
    with np.errstate(invalid="ignore"):
        y = np.sqrt(a.value)

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g * (0.5 / y))

    return _result(y, (a,), bwd)


def square(a):
    a = _coerce(a)

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g * (2.0 * a.value))

    return _result(a.value * a.value, (a,), bwd)


def absval(a):
    a = _coerce(a)

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g * np.sign(a.value))

    return _result(np.abs(a.value), (a,), bwd)


def scale(a, c):
    """Multiply by a python/numpy scalar constant."""
    a = _coerce(a)
    c = float(c)

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g * c)

    return _result(a.value * c, (a,), bwd)


def sum_(a, axis=None, keepdims=False):
    a = _coerce(a)
    val = a.value.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if not a.requires_grad:
            return
        gg = np.asarray(g)
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        a.grad = _acc(a.grad, np.broadcast_to(gg, a.value.shape))

    return _result(val, (a,), bwd)


def mean_(a, axis=None, keepdims=False):
    a = _coerce(a)
    if axis is None:
        count = a.value.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.value.shape[ax]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape):
    a = _coerce(a)

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g.reshape(a.value.shape))

    return _result(a.value.reshape(shape), (a,), bwd)


def take_slice(a, key):
    """Basic slicing only (slices/ints); positions are unique so backward
    is a plain scatter."""
    a = _coerce(a)
    val = a.value[key]

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.value)
            full[key] = g
            a.grad = _acc(a.grad, full)

    return _result(val, (a,), bwd)


def concat(tensors, axis=0):
    tensors = [_coerce(t) for t in tensors]
    val = np.concatenate([t.value for t in tensors], axis=axis)
    offsets = np.cumsum([t.value.shape[axis] for t in tensors])[:-1]

    def bwd(g):
        pieces = np.split(g, offsets, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t.grad = _acc(t.grad, piece)

    return _result(val, tuple(tensors), bwd)


def clamp(a, lo, hi):
    """Elementwise clip; gradient passes only where the input is inside
    [lo, hi]."""
    a = _coerce(a)
    inside = (a.value >= lo) & (a.value <= hi)

    def bwd(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g * inside)

    return _result(np.clip(a.value, lo, hi), (a,), bwd)


def batchnorm(x, gamma, beta, running_mean, running_var, training,
              momentum=0.1, eps=1e-5):
    """Batch norm over axis 0 of a (B, K, H) activation, one statistic per
    (K, H) feature.

    Training mode normalizes with mini-batch statistics (gradients flow
    through them) and updates the running buffers in place with the given
    momentum (running variance uses the unbiased estimate). Eval mode
    normalizes with the running buffers, treated as constants.
    """
    x, gamma, beta = _coerce(x), _coerce(gamma), _coerce(beta)
    if x.value.ndim != 3:
        raise ValueError(f"batchnorm expects a (B, K, H) input, got {x.value.shape}")
    b = x.value.shape[0]
    if training:
        if b < 2:
            raise ValueError("training-mode batch norm needs batch size >= 2")
        y, xhat, inv_std, mean, var = kernels.batchnorm_fwd(
            x.value, gamma.value, beta.value, eps)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * (var * (b / (b - 1.0)))

        def bwd(g):
            dx, dgamma, dbeta = kernels.batchnorm_bwd(g, xhat, inv_std, gamma.value)
            if x.requires_grad:
                x.grad = _acc(x.grad, dx)
            if gamma.requires_grad:
                gamma.grad = _acc(gamma.grad, dgamma)
            if beta.requires_grad:
                beta.grad = _acc(beta.grad, dbeta)

        return _result(y, (x, gamma, beta), bwd)

    inv_std = 1.0 / np.sqrt(running_var + eps)
    xhat = (x.value - running_mean) * inv_std
    y = xhat * gamma.value + beta.value

    def bwd(g):
        if x.requires_grad:
            x.grad = _acc(x.grad, g * (gamma.value * inv_std))
        if gamma.requires_grad:
            gamma.grad = _acc(gamma.grad, (g * xhat).sum(axis=0))
        if beta.requires_grad:
            beta.grad = _acc(beta.grad, g.sum(axis=0))

    return _result(y, (x, gamma, beta), bwd)


def dropout_mask(rng, shape, p_drop):
    """Pre-sampled inverted-dropout mask as a constant leaf tensor.

    Returns None when p_drop == 0 so callers can skip the multiply.
    """
    if not 0.0 <= p_drop < 1.0:
        raise ValueError(f"p_drop must be in [0, 1), got {p_drop}")
    if p_drop == 0.0:
        return None
    keep = rng.random(shape) >= p_drop
    return Tensor(keep.astype(np.float64) / (1.0 - p_drop))


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    """Max relative error per leaf, plus the leaves exceeding tolerance."""

    per_leaf: dict
    failed: tuple
    tol: float
    step: float

    @property
    def ok(self):
        return not self.failed

    def summary(self):
        lines = [f"gradient check: step={self.step:g} tol={self.tol:g}"]
        for name, err in self.per_leaf.items():
            mark = "FAIL" if name in self.failed else "ok"
            lines.append(f"  {mark:4s} {name}: max rel err {err:.3e}")
        return "\n".join(lines)


def grad_check(build, leaves, step=1e-5, tol=1e-4, denom_floor=1e-5):
    """Compare analytic gradients against central finite differences.

    ``build`` must rebuild the (scalar-output) graph from the current leaf
    values on every call and be deterministic. ``leaves`` is an iterable of
    (name, Tensor). The reported number is one relative error per leaf,
    max|a - n| / max(max|a|, max|n|, denom_floor); the floor keeps
    finite-difference roundoff on a leaf whose true gradient is zero from
    registering as spurious relative error.
    """
    leaves = list(leaves)
    for _, t in leaves:
        t.zero_grad()
    out = build()
    if out.value.size != 1:
        raise ValueError("grad_check expects a scalar-output graph")
    out.backward(np.ones_like(out.value))
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.value))
        for name, t in leaves
    }

    per_leaf = {}
    for name, t in leaves:
        flat = t.value.reshape(-1)
        numeric = np.empty_like(flat)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                f_plus = float(build().value)
                flat[i] = orig - step
                f_minus = float(build().value)
                flat[i] = orig
                numeric[i] = (f_plus - f_minus) / (2.0 * step)
        a = analytic[name].reshape(-1)
        if flat.size:
            scale = max(np.abs(a).max(), np.abs(numeric).max(), denom_floor)
            per_leaf[name] = float(np.abs(a - numeric).max() / scale)
        else:
            per_leaf[name] = 0.0
    failed = tuple(name for name, err in per_leaf.items() if err > tol)
    return GradCheckReport(per_leaf=per_leaf, failed=failed, tol=tol, step=step)
