"""Layer kernels as explicit forward/backward pairs, plus tape wrappers.

Feature maps are single images shaped ``(C, H, W)``; the training batch is one
frame, so there is no batch axis.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _result, as_tensor

BN_EPS = 1e-5


def _check_map(x, name="input"):
    if x.ndim != 3:
        raise ValueError(f"{name} must be (C, H, W), got shape {x.shape}")


# 3x3 convolution, stride 1, zero padding 1

def conv_forward(x, w, b):
    _check_map(x)
    C, H, W = x.shape
    if w.shape[1:] != (C, 3, 3):
        raise ValueError(f"conv weight {w.shape} does not match {C} input channels")
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    cols = sliding_window_view(xp, (3, 3), axis=(1, 2))
    cols = cols.transpose(0, 3, 4, 1, 2).reshape(C * 9, H * W)
    out = w.reshape(w.shape[0], -1) @ cols + b[:, None]
    return out.reshape(w.shape[0], H, W), cols


def conv_backward(g, cols, x_shape, w, need_dx=True):
    g2 = g.reshape(g.shape[0], -1)
    dw = (g2 @ cols.T).reshape(w.shape)
    db = g2.sum(axis=1)
    if not need_dx:
        return None, dw, db
    # input gradient is the same-padded convolution of g with the flipped kernel
    w_flip = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    dx, _ = conv_forward(g, np.ascontiguousarray(w_flip), np.zeros(w.shape[1]))
    return dx, dw, db


# 2x2 transposed convolution, stride 2

def deconv_forward(x, w, b):
    _check_map(x)
    C, H, W = x.shape
    if w.shape[0] != C or w.shape[2:] != (2, 2):
        raise ValueError(f"deconv weight {w.shape} does not match {C} input channels")
    O = w.shape[1]
    y = (w.reshape(C, -1).T @ x.reshape(C, -1)).reshape(O, 2, 2, H, W)
    out = np.empty((O, H, 2, W, 2))
    out[...] = y.transpose(0, 3, 1, 4, 2)
    out += b[:, None, None, None, None]
    return out.reshape(O, 2 * H, 2 * W)


def deconv_backward(g, x, w, need_dx=True):
    O, H2, W2 = g.shape
    C = x.shape[0]
    G = np.empty((O, 2, 2, H2 // 2, W2 // 2))
    G[...] = g.reshape(O, H2 // 2, 2, W2 // 2, 2).transpose(0, 2, 4, 1, 3)
    G = G.reshape(O * 4, -1)
    dx = (w.reshape(C, -1) @ G).reshape(x.shape) if need_dx else None
    dw = (x.reshape(C, -1) @ G.T).reshape(w.shape)
    db = g.sum(axis=(1, 2))
    return dx, dw, db


# 2x2 max pooling, stride 2

def _quadrants(x):
    return x[:, 0::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 0::2], x[:, 1::2, 1::2]


def maxpool_forward(x):
    """Returns pooled map and, per output cell, which quadrant held the max
    (first in row-major order on ties)."""
    _check_map(x)
    C, H, W = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"maxpool needs even spatial dims, got {H}x{W}")
    a, b, c, d = _quadrants(x)
    out = np.maximum(np.maximum(a, b), np.maximum(c, d))
    arg = np.full(out.shape, 3, dtype=np.int8)
    arg[c == out] = 2
    arg[b == out] = 1
    arg[a == out] = 0
    return out, arg


def maxpool_backward(g, arg):
    C, h, w = g.shape
    dx = np.zeros((C, 2 * h, 2 * w))
    for k, view in enumerate(_quadrants(dx)):
        view[...] = np.where(arg == k, g, 0.0)
    return dx


# batch norm over the spatial extent of one map

def batchnorm_forward(x, gamma, beta, mean=None, var=None):
    """Normalize per channel.  With ``mean``/``var`` given, use them (eval)."""
    _check_map(x)
    C = x.shape[0]
    flat = x.reshape(C, -1)
    if mean is None:
        mean = flat.mean(axis=1)
        xc = flat - mean[:, None]
        var = np.einsum("ij,ij->i", xc, xc) / flat.shape[1]
    else:
        xc = flat - mean[:, None]
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = xc
    xhat *= inv_std[:, None]
    out = xhat * gamma[:, None]
    out += beta[:, None]
    return out.reshape(x.shape), (xhat, inv_std, mean, var)


def batchnorm_backward(g, cache, gamma, batch_stats=True):
    xhat, inv_std, _, _ = cache
    shape = g.shape
    g = g.reshape(xhat.shape)
    dgamma = np.einsum("ij,ij->i", g, xhat)
    dbeta = g.sum(axis=1)
    if not batch_stats:
        return (g * (gamma * inv_std)[:, None]).reshape(shape), dgamma, dbeta
    m = xhat.shape[1]
    dx = xhat * (-dgamma / m)[:, None]
    dx += g
    dx -= (dbeta / m)[:, None]
    dx *= (gamma * inv_std)[:, None]
    return dx.reshape(shape), dgamma, dbeta


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(g, x):
    return g * (x > 0)


def softmax_forward(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def dense_forward(x, w, b):
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"dense input width {x.shape[-1]} != weight rows {w.shape[0]}")
    return x @ w + b


def dense_backward(g, x, w):
    return g @ w.T, x.T @ g, g.sum(axis=0)


# ROI max pooling

def bin_edges(length, bins):
    """Start/stop (exclusive) of each bin over ``length`` cells; every bin is non-empty."""
    starts = [(k * length) // bins for k in range(bins)]
    stops = [max(s + 1, -(-((k + 1) * length) // bins)) for k, s in enumerate(starts)]
    return list(zip(starts, stops))


def roi_pool_forward(fmap, boxes, bins=(3, 3)):
    """Max-pool each inclusive box ``(r0, c0, r1, c1)`` into ``bins`` cells.

    Returns ``(N, C*br*bc)`` vectors and the flat argmax index of every output.
    """
    _check_map(fmap, "feature map")
    C, H, W = fmap.shape
    br, bc = bins
    out = np.empty((len(boxes), C, br, bc))
    arg = np.empty((len(boxes), C, br, bc), dtype=np.intp)
    chan_offset = np.arange(C) * H * W
    for n, (r0, c0, r1, c1) in enumerate(boxes):
        if r1 < r0 or c1 < c0:
            raise ValueError(f"empty ROI {(r0, c0, r1, c1)}")
        if r0 < 0 or c0 < 0 or r1 >= H or c1 >= W:
            raise ValueError(f"ROI {(r0, c0, r1, c1)} outside {H}x{W} map")
        for i, (rs, re) in enumerate(bin_edges(r1 - r0 + 1, br)):
            for j, (cs, ce) in enumerate(bin_edges(c1 - c0 + 1, bc)):
                rows = slice(r0 + rs, r0 + re)
                cols = slice(c0 + cs, c0 + ce)
                patch = fmap[:, rows, cols].reshape(C, -1)
                k = patch.argmax(axis=1)
                out[n, :, i, j] = patch[np.arange(C), k]
                width = ce - cs
                arg[n, :, i, j] = chan_offset + (r0 + rs + k // width) * W + (c0 + cs + k % width)
    return out.reshape(len(boxes), -1), arg.reshape(len(boxes), -1)


def roi_pool_backward(g, arg, fmap_shape):
    full = np.zeros(int(np.prod(fmap_shape)))
    np.add.at(full, arg.ravel(), g.ravel())
    return full.reshape(fmap_shape)


# tape wrappers

def conv2d(x, w, b):
    x = as_tensor(x)
    out, cols = conv_forward(x.value, w.value, b.value)

    def backward(g):
        dx, dw, db = conv_backward(g, cols, x.shape, w.value, x.requires_grad)
        if x.requires_grad:
            x.accumulate(dx, owned=True)
        if w.requires_grad:
            w.accumulate(dw, owned=True)
        if b.requires_grad:
            b.accumulate(db, owned=True)

    return _result(out, (x, w, b), backward)


def deconv2d(x, w, b):
    x = as_tensor(x)
    out = deconv_forward(x.value, w.value, b.value)

    def backward(g):
        dx, dw, db = deconv_backward(g, x.value, w.value, x.requires_grad)
        if x.requires_grad:
            x.accumulate(dx, owned=True)
        if w.requires_grad:
            w.accumulate(dw, owned=True)
        if b.requires_grad:
            b.accumulate(db, owned=True)

    return _result(out, (x, w, b), backward)


def maxpool2d(x):
    x = as_tensor(x)
    out, arg = maxpool_forward(x.value)

    def backward(g):
        x.accumulate(maxpool_backward(g, arg), owned=True)

    return _result(out, (x,), backward)


def batchnorm2d(x, gamma, beta, mean=None, var=None):
    x = as_tensor(x)
    out, cache = batchnorm_forward(x.value, gamma.value, beta.value, mean, var)
    batch_stats = mean is None

    def backward(g):
        dx, dgamma, dbeta = batchnorm_backward(g, cache, gamma.value, batch_stats)
        if x.requires_grad:
            x.accumulate(dx, owned=True)
        if gamma.requires_grad:
            gamma.accumulate(dgamma, owned=True)
        if beta.requires_grad:
            beta.accumulate(dbeta, owned=True)

    result = _result(out, (x, gamma, beta), backward)
    return result, cache[2], cache[3]


def dense(x, w, b):
    x = as_tensor(x)
    out = dense_forward(x.value, w.value, b.value)

    def backward(g):
        dx, dw, db = dense_backward(g, x.value, w.value)
        if x.requires_grad:
            x.accumulate(dx, owned=True)
        if w.requires_grad:
            w.accumulate(dw, owned=True)
        if b.requires_grad:
            b.accumulate(db, owned=True)

    return _result(out, (x, w, b), backward)


def roi_pool(fmap, boxes, bins=(3, 3)):
    fmap = as_tensor(fmap)
    out, arg = roi_pool_forward(fmap.value, boxes, bins)

    def backward(g):
        fmap.accumulate(roi_pool_backward(g, arg, fmap.shape), owned=True)

    return _result(out, (fmap,), backward)


__all__ = [
    "Tensor", "conv2d", "deconv2d", "maxpool2d", "batchnorm2d", "dense", "roi_pool",
    "bin_edges",
]
