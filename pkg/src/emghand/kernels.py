"""Hot numeric kernels: numba-jitted loops with a pure-numpy fallback.

The backend is picked once at import from ``EMGHAND_NUMBA``:

    auto (default)  per-kernel winners as measured on this class of CPU:
                    numba for the reduction-heavy loops (layer norm,
                    softmax backward, track interpolation), numpy for the
                    transcendental-bound ones (softmax forward, GELU,
                    Adam) where numpy's SIMD math beats the scalar libm
                    calls LLVM emits
    1 / on / all    force numba everywhere
    0 / off         force pure numpy everywhere

Both paths compute the same reductions with float64 accumulators, so the
choice affects speed rather than results (beyond float rounding order).
``emghand bench --kernels`` times every kernel on both paths.

Everything here is shape-dumb on purpose: callers pass 2-D row views
(``(rows, width)``) or flat 1-D views and handle reshaping themselves.
"""

from __future__ import annotations

import math
import os

import numpy as np

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715

_env = os.environ.get("EMGHAND_NUMBA", "auto").strip().lower()

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag instead
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


if not HAS_NUMBA or _env in ("0", "off", "false", "no"):
    MODE = "numpy"
elif _env in ("1", "on", "all", "true", "yes"):
    MODE = "numba"
else:
    MODE = "auto"

USE_NUMBA = MODE != "numpy"


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------

def softmax_rows_np(x):
    """Row-wise softmax of a 2-D array; returns a new array, same dtype."""
    m = x.max(axis=1, keepdims=True)
    p = np.exp(x - m)
    p /= p.sum(axis=1, keepdims=True)
    return p


def softmax_rows_owned_np(x):
    """Row softmax that may reuse ``x``'s storage (caller yields ownership)."""
    m = x.max(axis=1, keepdims=True)
    np.subtract(x, m, out=x)
    np.exp(x, out=x)
    x /= x.sum(axis=1, keepdims=True)
    return x


def softmax_grad_np(p, dp):
    """Backward of row softmax: dx = p * (dp - sum(dp * p))."""
    inner = (dp * p).sum(axis=1, keepdims=True)
    return p * (dp - inner)


def layernorm_np(x, g, b, eps=1e-5):
    """Row-wise layer norm. Returns (y, xhat, inv_std)."""
    mu = x.mean(axis=1, keepdims=True, dtype=np.float64)
    var = np.mean((x - mu) ** 2, axis=1, keepdims=True, dtype=np.float64)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((x - mu) * inv).astype(x.dtype)
    return xhat * g + b, xhat, inv.astype(x.dtype).ravel()


def layernorm_grad_np(dy, xhat, inv, g):
    """Backward of layer norm. Returns (dx, dgamma, dbeta)."""
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    m1 = dxhat.mean(axis=1, keepdims=True, dtype=np.float64)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True, dtype=np.float64)
    dx = (inv[:, None] * (dxhat - m1 - xhat * m2)).astype(dy.dtype)
    return dx, dg, db


def gelu_np(x):
    """tanh-approximation GELU."""
    u = _SQRT_2_OVER_PI * (x + _GELU_C * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_grad_np(x, dy):
    u = _SQRT_2_OVER_PI * (x + _GELU_C * x * x * x)
    t = np.tanh(u)
    du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def gelu_fwd_np(x):
    """GELU returning (y, tanh_u) so backward can skip the tanh."""
    u = _SQRT_2_OVER_PI * (x + _GELU_C * x * x * x)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), t


def gelu_bwd_np(x, t, dy):
    du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def adam_step_np(w, g, m, v, lr, beta1, beta2, eps, b1c, b2c):
    """One in-place Adam update on flat views. b1c/b2c are 1-beta^t."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    w -= lr * (m / b1c) / (np.sqrt(v / b2c) + eps)


def interp_rows_np(src, t0, rate, times):
    """Sample a uniform multichannel track at arbitrary times.

    ``src`` is (n, channels) with sample i at ``t0 + i / rate``. Times that
    land on a source sample (within 1e-9 of a grid node) are copied exactly,
    everything else is linearly interpolated. Out-of-range times are clamped
    to the edge samples.
    """
    n = src.shape[0]
    idx = (np.asarray(times, dtype=np.float64) - t0) * rate
    idx = np.clip(idx, 0.0, n - 1.0)
    i0 = np.floor(idx).astype(np.int64)
    i0 = np.minimum(i0, n - 2) if n > 1 else np.zeros_like(i0)
    frac = idx - i0
    snap_lo = frac < 1e-9
    snap_hi = frac > 1.0 - 1e-9
    frac = np.where(snap_lo, 0.0, np.where(snap_hi, 1.0, frac))
    lo = src[i0]
    hi = src[np.minimum(i0 + 1, n - 1)]
    out = lo + frac[:, None] * (hi - lo)
    out[snap_lo] = lo[snap_lo]
    out[snap_hi] = hi[snap_hi]
    return out.astype(src.dtype)


# ---------------------------------------------------------------------------
# numba kernels (same math, explicit loops)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _softmax_rows_nb(x):
    rows, width = x.shape
    out = np.empty_like(x)
    for i in range(rows):
        m = x[i, 0]
        for j in range(1, width):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(width):
            e = np.exp(x[i, j] - m)
            out[i, j] = e
            s += e
        inv = 1.0 / s
        for j in range(width):
            out[i, j] *= inv
    return out


@njit(cache=True)
def _softmax_grad_nb(p, dp):
    rows, width = p.shape
    out = np.empty_like(p)
    for i in range(rows):
        inner = 0.0
        for j in range(width):
            inner += dp[i, j] * p[i, j]
        for j in range(width):
            out[i, j] = p[i, j] * (dp[i, j] - inner)
    return out


@njit(cache=True)
def _layernorm_nb(x, g, b, eps):
    rows, width = x.shape
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    inv = np.empty(rows, dtype=x.dtype)
    for i in range(rows):
        mu = 0.0
        for j in range(width):
            mu += x[i, j]
        mu /= width
        var = 0.0
        for j in range(width):
            d = x[i, j] - mu
            var += d * d
        var /= width
        s = 1.0 / np.sqrt(var + eps)
        inv[i] = s
        for j in range(width):
            h = (x[i, j] - mu) * s
            xhat[i, j] = h
            y[i, j] = h * g[j] + b[j]
    return y, xhat, inv


@njit(cache=True)
def _layernorm_grad_nb(dy, xhat, inv, g):
    rows, width = dy.shape
    dx = np.empty_like(dy)
    dg = np.zeros(width, dtype=np.float64)
    db = np.zeros(width, dtype=np.float64)
    for i in range(rows):
        m1 = 0.0
        m2 = 0.0
        for j in range(width):
            dg[j] += dy[i, j] * xhat[i, j]
            db[j] += dy[i, j]
            dh = dy[i, j] * g[j]
            m1 += dh
            m2 += dh * xhat[i, j]
        m1 /= width
        m2 /= width
        for j in range(width):
            dh = dy[i, j] * g[j]
            dx[i, j] = inv[i] * (dh - m1 - xhat[i, j] * m2)
    return dx, dg.astype(dy.dtype), db.astype(dy.dtype)


@njit(cache=True)
def _gelu_nb(x):
    out = np.empty_like(x)
    flat_x = x.ravel()
    flat_o = out.ravel()
    for i in range(flat_x.size):
        v = flat_x[i]
        u = _SQRT_2_OVER_PI * (v + _GELU_C * v * v * v)
        flat_o[i] = 0.5 * v * (1.0 + np.tanh(u))
    return out


@njit(cache=True)
def _gelu_grad_nb(x, dy):
    out = np.empty_like(x)
    flat_x = x.ravel()
    flat_dy = dy.ravel()
    flat_o = out.ravel()
    for i in range(flat_x.size):
        v = flat_x[i]
        u = _SQRT_2_OVER_PI * (v + _GELU_C * v * v * v)
        t = np.tanh(u)
        du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * v * v)
        flat_o[i] = flat_dy[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
    return out


@njit(cache=True)
def _adam_step_nb(w, g, m, v, lr, beta1, beta2, eps, b1c, b2c):
    for i in range(w.size):
        gi = g[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
        w[i] -= lr * (m[i] / b1c) / (np.sqrt(v[i] / b2c) + eps)


@njit(cache=True)
def _interp_rows_nb(src, t0, rate, times):
    n, channels = src.shape
    m = times.shape[0]
    out = np.empty((m, channels), dtype=src.dtype)
    for i in range(m):
        idx = (times[i] - t0) * rate
        if idx < 0.0:
            idx = 0.0
        if idx > n - 1.0:
            idx = n - 1.0
        i0 = int(np.floor(idx))
        if i0 > n - 2:
            i0 = n - 2 if n > 1 else 0
        frac = idx - i0
        if frac < 1e-9:
            for c in range(channels):
                out[i, c] = src[i0, c]
        elif frac > 1.0 - 1e-9:
            for c in range(channels):
                out[i, c] = src[i0 + 1, c]
        else:
            for c in range(channels):
                lo = src[i0, c]
                out[i, c] = lo + frac * (src[i0 + 1, c] - lo)
    return out


def _interp_rows_nb_wrap(src, t0, rate, times):
    return _interp_rows_nb(src, float(t0), float(rate),
                           np.ascontiguousarray(times, dtype=np.float64))


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------

def _c(a):
    return np.ascontiguousarray(a)


def softmax_rows_numba(x):
    return _softmax_rows_nb(_c(x))


def softmax_grad_numba(p, dp):
    return _softmax_grad_nb(_c(p), _c(dp))


def layernorm_numba(x, g, b, eps=1e-5):
    return _layernorm_nb(_c(x), _c(g), _c(b), float(eps))


def layernorm_grad_numba(dy, xhat, inv, g):
    return _layernorm_grad_nb(_c(dy), _c(xhat), _c(inv), _c(g))


def gelu_numba(x):
    return _gelu_nb(_c(x))


def gelu_grad_numba(x, dy):
    return _gelu_grad_nb(_c(x), _c(dy))


def adam_step_numba(w, g, m, v, lr, beta1, beta2, eps, b1c, b2c):
    _adam_step_nb(w, _c(g), m, v, float(lr), float(beta1),
                  float(beta2), float(eps), float(b1c), float(b2c))


interp_rows_numba = _interp_rows_nb_wrap

IMPLS = {
    "numpy": {
        "softmax_rows": softmax_rows_np,
        "softmax_rows_owned": softmax_rows_owned_np,
        "softmax_grad": softmax_grad_np,
        "layernorm": layernorm_np,
        "layernorm_grad": layernorm_grad_np,
        "gelu": gelu_np,
        "gelu_grad": gelu_grad_np,
        "gelu_fwd": gelu_fwd_np,
        "gelu_bwd": gelu_bwd_np,
        "adam_step": adam_step_np,
        "interp_rows": interp_rows_np,
    },
}
if HAS_NUMBA:
    IMPLS["numba"] = {
        "softmax_rows": softmax_rows_numba,
        "softmax_rows_owned": softmax_rows_numba,
        "softmax_grad": softmax_grad_numba,
        "layernorm": layernorm_numba,
        "layernorm_grad": layernorm_grad_numba,
        "gelu": gelu_numba,
        "gelu_grad": gelu_grad_numba,
        "gelu_fwd": lambda x: (gelu_numba(x), None),
        "gelu_bwd": lambda x, t, dy: gelu_grad_numba(x, dy),
        "adam_step": adam_step_numba,
        "interp_rows": interp_rows_numba,
    }
    # measured winners: loops with cheap per-element math go to numba,
    # transcendental-heavy ones stay on numpy's vectorized math
    IMPLS["auto"] = dict(IMPLS["numpy"])
    IMPLS["auto"].update({
        "softmax_grad": softmax_grad_numba,
        "layernorm": layernorm_numba,
        "layernorm_grad": layernorm_grad_numba,
        "interp_rows": interp_rows_numba,
    })

_active = IMPLS[MODE]
softmax_rows = _active["softmax_rows"]
softmax_rows_owned = _active["softmax_rows_owned"]
softmax_grad = _active["softmax_grad"]
layernorm = _active["layernorm"]
layernorm_grad = _active["layernorm_grad"]
gelu = _active["gelu"]
gelu_grad = _active["gelu_grad"]
gelu_fwd = _active["gelu_fwd"]
gelu_bwd = _active["gelu_bwd"]
adam_step = _active["adam_step"]
interp_rows = _active["interp_rows"]


def backend() -> str:
    return MODE


def warmup(impls: dict | None = None):
    """Force JIT compilation of every kernel (both float32 and float64)."""
    if not USE_NUMBA and impls is None:
        return
    impls = impls or _active
    for dt in (np.float32, np.float64):
        x = np.linspace(-1.0, 1.0, 8, dtype=dt).reshape(2, 4)
        g = np.ones(4, dtype=dt)
        b = np.zeros(4, dtype=dt)
        p = impls["softmax_rows"](x)
        impls["softmax_grad"](p, x)
        y, xhat, inv = impls["layernorm"](x, g, b, 1e-5)
        impls["layernorm_grad"](x, xhat, inv, g)
        impls["gelu_grad"](x, impls["gelu"](x))
        w = x.ravel().copy()
        impls["adam_step"](w, w.copy(), np.zeros_like(w), np.zeros_like(w),
                           0.001, 0.9, 0.999, 1e-8, 0.1, 0.001)
        impls["interp_rows"](x, 0.0, 4.0, np.array([0.0, 0.1, 0.25]))
