"""Transformer building blocks in numpy with hand-written backward passes.

Every block comes as a fwd/bwd pair: fwd returns (output, cache) and bwd
consumes the cache and fills a flat gradients dict keyed by parameter
name. GEMMs fold (batch, seq) into one axis so BLAS sees large matrices;
elementwise pieces (softmax, layer norm, GELU, Adam) run through
``kernels``, which is numba-jitted when available.
"""

from __future__ import annotations

import numpy as np

from . import kernels

LN_EPS = 1e-5


def trunc_normal(rng, shape, std=0.02, dtype=np.float32):
    """Normal(0, std) resampled until every draw lies within 2 std."""
    x = rng.standard_normal(shape)
    for _ in range(8):
        bad = np.abs(x) > 2.0
        if not bad.any():
            break
        x[bad] = rng.standard_normal(int(bad.sum()))
    return (x * std).astype(dtype)


# ---------------------------------------------------------------------------
# layer norm (pre-norm blocks)
# ---------------------------------------------------------------------------

def ln_fwd(x, g, b):
    """x: (..., d). Returns (y, cache)."""
    shp = x.shape
    y, xhat, inv = kernels.layernorm(x.reshape(-1, shp[-1]), g, b, LN_EPS)
    return y.reshape(shp), (xhat, inv, shp)


def ln_bwd(dy, cache, g):
    xhat, inv, shp = cache
    dx, dg, db = kernels.layernorm_grad(dy.reshape(-1, shp[-1]), xhat, inv, g)
    return dx.reshape(shp), dg, db


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

def _split_heads(x2, B, T, H, hd):
    return np.ascontiguousarray(
        x2.reshape(B, T, H, hd).transpose(0, 2, 1, 3))


def _merge_heads(x4, B, T, H, hd):
    return np.ascontiguousarray(x4.transpose(0, 2, 1, 3)).reshape(B * T, H * hd)


def self_attn_fwd(x, Wqkv, bqkv, Wo, bo, n_heads):
    """x: (B, T, d) -> (B, T, d)."""
    B, T, d = x.shape
    H, hd = n_heads, d // n_heads
    scale = 1.0 / np.sqrt(hd)
    x2 = x.reshape(B * T, d)
    qkv = (x2 @ Wqkv + bqkv).reshape(B, T, 3, H, hd).transpose(2, 0, 3, 1, 4)
    q = np.ascontiguousarray(qkv[0])
    q *= x.dtype.type(scale)
    k = np.ascontiguousarray(qkv[1])
    v = np.ascontiguousarray(qkv[2])
    s = np.matmul(q, k.transpose(0, 1, 3, 2))
    p = kernels.softmax_rows_owned(s.reshape(-1, T)).reshape(B, H, T, T)
    o = _merge_heads(np.matmul(p, v), B, T, H, hd)
    y = o @ Wo + bo
    cache = (x2, q, k, v, p, o, (B, T, H, hd, scale))
    return y.reshape(B, T, d), cache


def self_attn_bwd(dy, cache, Wqkv, Wo):
    x2, q, k, v, p, o, (B, T, H, hd, scale) = cache
    d = H * hd
    dy2 = dy.reshape(B * T, d)
    dWo = o.T @ dy2
    dbo = dy2.sum(axis=0)
    do = _split_heads(dy2 @ Wo.T, B, T, H, hd)
    dp = np.matmul(do, v.transpose(0, 1, 3, 2))
    dv = np.matmul(p.transpose(0, 1, 3, 2), do)
    ds = kernels.softmax_grad(p.reshape(-1, T), dp.reshape(-1, T)) \
        .reshape(B, H, T, T)
    dq = np.matmul(ds, k)
    dq *= dy.dtype.type(scale)
    dk = np.matmul(ds.transpose(0, 1, 3, 2), q)
    buf = np.empty((B, T, 3, H, hd), dtype=dy.dtype)
    view = buf.transpose(2, 0, 3, 1, 4)
    view[0] = dq
    view[1] = dk
    view[2] = dv
    dqkv = buf.reshape(B * T, 3 * d)
    dWqkv = x2.T @ dqkv
    dbqkv = dqkv.sum(axis=0)
    dx = (dqkv @ Wqkv.T).reshape(B, T, d)
    return dx, {"Wqkv": dWqkv, "bqkv": dbqkv, "Wo": dWo, "bo": dbo}


def cross_attn_fwd(xq, ctx, Wq, bq, Wkv, bkv, Wo, bo, n_heads):
    """xq: (B, Q, d) queries, ctx: (B, T, d) keys/values -> (B, Q, d)."""
    B, Q, d = xq.shape
    T = ctx.shape[1]
    H, hd = n_heads, d // n_heads
    scale = 1.0 / np.sqrt(hd)
    xq2 = xq.reshape(B * Q, d)
    ctx2 = ctx.reshape(B * T, d)
    q2 = xq2 @ Wq + bq
    kv = (ctx2 @ Wkv + bkv).reshape(B, T, 2, H, hd).transpose(2, 0, 3, 1, 4)
    q = _split_heads(q2, B, Q, H, hd)
    q *= xq.dtype.type(scale)
    k = np.ascontiguousarray(kv[0])
    v = np.ascontiguousarray(kv[1])
    s = np.matmul(q, k.transpose(0, 1, 3, 2))
    p = kernels.softmax_rows_owned(s.reshape(-1, T)).reshape(B, H, Q, T)
    o = _merge_heads(np.matmul(p, v), B, Q, H, hd)
    y = o @ Wo + bo
    cache = (xq2, ctx2, q, k, v, p, o, (B, Q, T, H, hd, scale))
    return y.reshape(B, Q, d), cache


def cross_attn_bwd(dy, cache, Wq, Wkv, Wo):
    xq2, ctx2, q, k, v, p, o, (B, Q, T, H, hd, scale) = cache
    d = H * hd
    dy2 = dy.reshape(B * Q, d)
    dWo = o.T @ dy2
    dbo = dy2.sum(axis=0)
    do = _split_heads(dy2 @ Wo.T, B, Q, H, hd)
    dp = np.matmul(do, v.transpose(0, 1, 3, 2))
    dv = np.matmul(p.transpose(0, 1, 3, 2), do)
    ds = kernels.softmax_grad(p.reshape(-1, T), dp.reshape(-1, T)) \
        .reshape(B, H, Q, T)
    dq = np.matmul(ds, k)
    dq *= dy.dtype.type(scale)
    dk = np.matmul(ds.transpose(0, 1, 3, 2), q)
    dq2 = _merge_heads(dq, B, Q, H, hd)
    buf = np.empty((B, T, 2, H, hd), dtype=dy.dtype)
    view = buf.transpose(2, 0, 3, 1, 4)
    view[0] = dk
    view[1] = dv
    dkv = buf.reshape(B * T, 2 * d)
    dWq = xq2.T @ dq2
    dbq = dq2.sum(axis=0)
    dWkv = ctx2.T @ dkv
    dbkv = dkv.sum(axis=0)
    dxq = (dq2 @ Wq.T).reshape(B, Q, d)
    dctx = (dkv @ Wkv.T).reshape(B, T, d)
    grads = {"Wq": dWq, "bq": dbq, "Wkv": dWkv, "bkv": dbkv,
             "Wo": dWo, "bo": dbo}
    return dxq, dctx, grads


# ---------------------------------------------------------------------------
# feed-forward
# ---------------------------------------------------------------------------

def ffn_fwd(x, W1, b1, W2, b2):
    shp = x.shape
    x2 = x.reshape(-1, shp[-1])
    pre = x2 @ W1 + b1
    h, tanh_u = kernels.gelu_fwd(pre)
    y = h @ W2 + b2
    return y.reshape(shp), (x2, pre, tanh_u, h, shp)


def ffn_bwd(dy, cache, W1, W2):
    x2, pre, tanh_u, h, shp = cache
    dy2 = dy.reshape(-1, shp[-1])
    dW2 = h.T @ dy2
    db2 = dy2.sum(axis=0)
    dpre = kernels.gelu_bwd(pre, tanh_u, dy2 @ W2.T)
    dW1 = x2.T @ dpre
    db1 = dpre.sum(axis=0)
    dx = (dpre @ W1.T).reshape(shp)
    return dx, {"W1": dW1, "b1": db1, "W2": dW2, "b2": db2}


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Plain Adam over a dict of named tensors; moments created lazily."""

    def __init__(self, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, w in params.items():
            g = grads.get(name)
            if g is None:
                continue  # parameter not touched by this loss (stage split)
            if name not in self.m:
                self.m[name] = np.zeros_like(w)
                self.v[name] = np.zeros_like(w)
            kernels.adam_step(w.ravel(), np.ascontiguousarray(g).ravel(),
                              self.m[name].ravel(), self.v[name].ravel(),
                              self.lr, self.beta1, self.beta2, self.eps,
                              b1c, b2c)

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out
