"""Differentiable tensor primitives (numpy): each op returns (out, cache) and
has a matching backward that consumes the cache and the upstream gradient.

Token tensors are (B, N, D); image tensors are (B, C, H, W). Everything is
deterministic: fixed inputs give bit-identical outputs and gradients.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)
LN_EPS = 1e-5


# -- linear -----------------------------------------------------------------

def linear_fwd(x, w, b):
    # x (..., Din), w (Dout, Din), b (Dout)
    y = x @ w.T + b
    return y, (x, w)


def linear_bwd(cache, dy):
    x, w = cache
    dx = dy @ w
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dw = dy2.T @ x2
    db = dy2.sum(axis=0)
    return dx, dw, db


# -- layer norm -------------------------------------------------------------

def layernorm_fwd(x, g, b, eps=LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def layernorm_bwd(cache, dy):
    xhat, inv, g = cache
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    lead = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axis=lead)
    db = dy.sum(axis=lead)
    return dx, dg, db


# -- activations ------------------------------------------------------------

def gelu_fwd(x):
    phi_c = 0.5 * (1.0 + erf(x * _INV_SQRT2))  # standard normal CDF
    return x * phi_c, (x, phi_c)


def gelu_bwd(cache, dy):
    x, phi_c = cache
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return dy * (phi_c + x * pdf)


def relu_fwd(x):
    mask = x > 0
    return x * mask, mask


def relu_bwd(mask, dy):
    return dy * mask


def sigmoid_fwd(x):
    # stable in both tails
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out, out


def sigmoid_bwd(y, dy):
    return dy * y * (1.0 - y)


def softmax_fwd(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    return p, p


def softmax_bwd(p, dy):
    return p * (dy - (dy * p).sum(axis=-1, keepdims=True))


# -- convolutions -----------------------------------------------------------

def conv3x3_fwd(x, w, b):
    # x (B,C,H,W), w (O,C,3,3), stride 1, same padding
    bs, c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    y = np.broadcast_to(b[None, :, None, None], (bs, w.shape[0], h, wd)).copy()
    for dy_ in range(3):
        for dx_ in range(3):
            y += np.einsum("oc,bchw->bohw", w[:, :, dy_, dx_],
                           xp[:, :, dy_:dy_ + h, dx_:dx_ + wd], optimize=True)
    return y, (xp, w, x.shape)


def conv3x3_bwd(cache, dout):
    xp, w, xshape = cache
    bs, c, h, wd = xshape
    db = dout.sum(axis=(0, 2, 3))
    dw = np.zeros_like(w)
    dxp = np.zeros_like(xp)
    for dy_ in range(3):
        for dx_ in range(3):
            patch = xp[:, :, dy_:dy_ + h, dx_:dx_ + wd]
            dw[:, :, dy_, dx_] = np.einsum("bohw,bchw->oc", dout, patch, optimize=True)
            dxp[:, :, dy_:dy_ + h, dx_:dx_ + wd] += np.einsum(
                "oc,bohw->bchw", w[:, :, dy_, dx_], dout, optimize=True)
    dx = dxp[:, :, 1:h + 1, 1:wd + 1]
    return dx, dw, db


def conv1x1_fwd(x, w, b):
    # w (O, C)
    y = np.einsum("oc,bchw->bohw", w, x, optimize=True) + b[None, :, None, None]
    return y, (x, w)


def conv1x1_bwd(cache, dout):
    x, w = cache
    db = dout.sum(axis=(0, 2, 3))
    dw = np.einsum("bohw,bchw->oc", dout, x, optimize=True)
    dx = np.einsum("oc,bohw->bchw", w, dout, optimize=True)
    return dx, dw, db


# -- resampling -------------------------------------------------------------

def upsample_nearest_fwd(x, f: int):
    y = x.repeat(f, axis=2).repeat(f, axis=3)
    return y, (x.shape, f)


def upsample_nearest_bwd(cache, dout):
    (bs, c, h, w), f = cache
    return dout.reshape(bs, c, h, f, w, f).sum(axis=(3, 5))


def _bilinear_axis(n_src: int, n_dst: int):
    # half-pixel centers with edge clamp; matches raster.resample
    src = (np.arange(n_dst, dtype=np.float64) + 0.5) * (n_src / n_dst) - 0.5
    src = np.clip(src, 0.0, n_src - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_src - 1)
    return i0, i1, src - i0


def upsample_bilinear_fwd(x, f: int):
    bs, c, h, w = x.shape
    r0, r1, fr = _bilinear_axis(h, h * f)
    c0, c1, fc = _bilinear_axis(w, w * f)
    fr = fr.astype(x.dtype)
    fc = fc.astype(x.dtype)
    rows = x[:, :, r0, :] + fr[None, None, :, None] * (x[:, :, r1, :] - x[:, :, r0, :])
    y = rows[:, :, :, c0] + fc[None, None, None, :] * (rows[:, :, :, c1] - rows[:, :, :, c0])
    return y, (x.shape, r0, r1, fr, c0, c1, fc)


def upsample_bilinear_bwd(cache, dout):
    (bs, c, h, w), r0, r1, fr, c0, c1, fc = cache
    drows = np.zeros((bs, c, len(fr), w), dtype=dout.dtype)
    wc = fc[None, None, None, :]
    np.add.at(drows, (slice(None), slice(None), slice(None), c0), dout * (1.0 - wc))
    np.add.at(drows, (slice(None), slice(None), slice(None), c1), dout * wc)
    dx = np.zeros((bs, c, h, w), dtype=dout.dtype)
    wr = fr[None, None, :, None]
    np.add.at(dx, (slice(None), slice(None), r0, slice(None)), drows * (1.0 - wr))
    np.add.at(dx, (slice(None), slice(None), r1, slice(None)), drows * wr)
    return dx
