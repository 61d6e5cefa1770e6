"""Hot numeric kernels: numba-jitted fast path, pure-numpy fallback.

The dense matrix products always go through numpy (BLAS beats anything we
could hand-roll). What lives here are the fused elementwise/reduction loops
that numpy otherwise evaluates through a chain of temporaries: batch-norm
statistics, the tanh backward product, the Adam parameter update, and the
squared-norm reduction used by gradient clipping.

Backend selection via the MOTIONPRED_NUMBA environment variable:

    auto  (default)  use numba when importable, else fall back to numpy
    1                require numba, raise if it cannot be imported
    0                force the pure-numpy fallback

``ACTIVE_BACKEND`` records the selected backend. ``IMPLEMENTATIONS`` maps
backend name to its kernel table so benchmarks/bench_kernels.py can time
both paths side by side.

All kernels expect C-contiguous float64 arrays. The numpy and numba paths
agree to floating-point roundoff (reduction order differs), and each path
is bit-deterministic run to run.
"""

import os

import numpy as np

_MODE = os.environ.get("MOTIONPRED_NUMBA", "auto").strip().lower()
if _MODE not in ("auto", "0", "1"):
    raise ValueError(f"MOTIONPRED_NUMBA must be 'auto', '0' or '1', got {_MODE!r}")


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------

def _batchnorm_fwd_np(x, gamma, beta, eps):
    # x: (B, K, H); statistics per (K, H) feature over the batch axis
    mean = x.mean(axis=0)
    var = x.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    y = xhat * gamma + beta
    return y, xhat, inv_std, mean, var


def _batchnorm_bwd_np(g, xhat, inv_std, gamma):
    b = g.shape[0]
    dbeta = g.sum(axis=0)
    dgamma = (g * xhat).sum(axis=0)
    dx = (gamma * inv_std) * (g - dbeta / b - xhat * (dgamma / b))
    return dx, dgamma, dbeta


def _tanh_bwd_np(g, y):
    # g, y: flat 1-d views of equal size
    return g * (1.0 - y * y)


def _adam_update_np(p, g, m, v, step, lr, beta1, beta2, eps):
    # flat 1-d views; p, m, v updated in place
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def _sq_sum_np(x):
    return float((x * x).sum())


_NUMPY_IMPLS = {
    "batchnorm_fwd": _batchnorm_fwd_np,
    "batchnorm_bwd": _batchnorm_bwd_np,
    "tanh_bwd": _tanh_bwd_np,
    "adam_update": _adam_update_np,
    "sq_sum": _sq_sum_np,
}


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _build_numba_impls():
    from numba import njit

    @njit(cache=True)
    def batchnorm_fwd(x, gamma, beta, eps):
        b, k, h = x.shape
        mean = np.zeros((k, h))
        for i in range(b):
            mean += x[i]
        mean /= b
        var = np.zeros((k, h))
        for i in range(b):
            d = x[i] - mean
            var += d * d
        var /= b
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = np.empty_like(x)
        y = np.empty_like(x)
        for i in range(b):
            xhat[i] = (x[i] - mean) * inv_std
            y[i] = xhat[i] * gamma + beta
        return y, xhat, inv_std, mean, var

    @njit(cache=True)
    def batchnorm_bwd(g, xhat, inv_std, gamma):
        b, k, h = g.shape
        dbeta = np.zeros((k, h))
        dgamma = np.zeros((k, h))
        for i in range(b):
            dbeta += g[i]
            dgamma += g[i] * xhat[i]
        dx = np.empty_like(g)
        scale = gamma * inv_std
        for i in range(b):
            dx[i] = scale * (g[i] - dbeta / b - xhat[i] * (dgamma / b))
        return dx, dgamma, dbeta

    @njit(cache=True)
    def tanh_bwd(g, y):
        out = np.empty_like(g)
        for i in range(g.size):
            out[i] = g[i] * (1.0 - y[i] * y[i])
        return out

    @njit(cache=True)
    def adam_update(p, g, m, v, step, lr, beta1, beta2, eps):
        bc1 = 1.0 - beta1 ** step
        bc2 = 1.0 - beta2 ** step
        for i in range(p.size):
            gi = g[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
            p[i] -= lr * (m[i] / bc1) / (np.sqrt(v[i] / bc2) + eps)

    @njit(cache=True)
    def sq_sum(x):
        acc = 0.0
        for i in range(x.size):
            acc += x[i] * x[i]
        return acc

    return {
        "batchnorm_fwd": batchnorm_fwd,
        "batchnorm_bwd": batchnorm_bwd,
        "tanh_bwd": tanh_bwd,
        "adam_update": adam_update,
        "sq_sum": sq_sum,
    }


IMPLEMENTATIONS = {"numpy": _NUMPY_IMPLS}
ACTIVE_BACKEND = "numpy"
if _MODE != "0":
    try:
        IMPLEMENTATIONS["numba"] = _build_numba_impls()
        ACTIVE_BACKEND = "numba"
    except ImportError:
        if _MODE == "1":
            raise

_ACTIVE = IMPLEMENTATIONS[ACTIVE_BACKEND]


def _flat(a):
    """C-contiguous flat float64 view (copies only if the input is not)."""
    return np.ascontiguousarray(a, dtype=np.float64).reshape(-1)


def batchnorm_fwd(x, gamma, beta, eps=1e-5):
    """Training-mode batch norm over axis 0 of a (B, K, H) activation.

    Returns (y, xhat, inv_std, mean, biased_var); the middle values are the
    intermediates the backward pass needs.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _ACTIVE["batchnorm_fwd"](x, gamma, beta, float(eps))


def batchnorm_bwd(g, xhat, inv_std, gamma):
    g = np.ascontiguousarray(g, dtype=np.float64)
    return _ACTIVE["batchnorm_bwd"](g, xhat, inv_std, gamma)


def tanh_bwd(grad, y):
    """Fused grad * (1 - y^2) for tanh outputs y."""
    g = _flat(grad)
    out = _ACTIVE["tanh_bwd"](g, _flat(y))
    return out.reshape(np.shape(grad))


def adam_update(p, g, m, v, step, lr, beta1, beta2, eps):
    """In-place Adam update on parameter p with moments m, v (flat views)."""
    gf = _flat(g)
    _ACTIVE["adam_update"](p.reshape(-1), gf, m.reshape(-1), v.reshape(-1),
                           step, lr, beta1, beta2, eps)


def sq_sum(x):
    """Sum of squared entries, as a python float."""
    return float(_ACTIVE["sq_sum"](_flat(x)))
