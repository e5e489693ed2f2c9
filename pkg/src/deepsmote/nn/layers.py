"""Forward and backward passes for the fixed layer set.

Every layer function works on a whole batch (leading axis N). Forward returns
``(output, cache)``; backward consumes the cache and returns
``(grads, grad_input)`` where ``grads`` maps parameter short names
(``"weight"``, ``"bias"``) to gradient arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import CacheMismatchError, ShapeError
from .params import BN_EPS, BN_MOMENTUM, ParamStore
from .spec import NetworkSpec


def _windows(xp, k, s, oh, ow):
    # (N, C, oh, ow, k, k) strided view of a padded input
    v = sliding_window_view(xp, (k, k), axis=(2, 3))
    return v[:, :, : s * (oh - 1) + 1 : s, : s * (ow - 1) + 1 : s]


def _scatter(shape, cols, s, dtype):
    # adjoint of _windows; cols is (C, k, k, N, oh, ow), result is (N, C, H, W).
    # Taps are summed per output phase (row % s, col % s) into dense buffers,
    # then each phase is written once with stride s.
    c, k, _, n, oh, ow = cols.shape
    h, w = shape
    dst = np.zeros((c, n, h, w), dtype=dtype)
    for a in range(min(s, k)):
        rows = len(range(a, h, s))
        for b in range(min(s, k)):
            cols_b = len(range(b, w, s))
            phase = np.zeros((c, n, rows, cols_b), dtype=dtype)
            for i in range(a, k, s):
                qi = i // s
                for j in range(b, k, s):
                    qj = j // s
                    phase[:, :, qi : qi + oh, qj : qj + ow] += cols[:, i, j]
            dst[:, :, a::s, b::s] = phase
    return dst.transpose(1, 0, 2, 3)


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(xp, k, s, oh, ow):
    # (N*oh*ow, C*k*k) patch matrix
    n, c = xp.shape[:2]
    return _windows(xp, k, s, oh, ow).transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * k * k)


def conv2d_forward(layer, p, x):
    k, s, pad = layer.kernel, layer.stride, layer.padding
    xp = _pad(x, pad)
    n = x.shape[0]
    oh = (xp.shape[2] - k) // s + 1
    ow = (xp.shape[3] - k) // s + 1
    w = p["weight"]
    cols = _im2col(xp, k, s, oh, ow)
    y = (cols @ w.reshape(w.shape[0], -1).T).reshape(n, oh, ow, -1).transpose(0, 3, 1, 2)
    if layer.bias:
        y = y + p["bias"][None, :, None, None]
    return y, {"cols": cols, "xp_shape": xp.shape, "out_hw": (oh, ow)}


def conv2d_backward(layer, p, cache, g):
    s, pad = layer.stride, layer.padding
    w = p["weight"]
    o = w.shape[0]
    g_t = g.transpose(1, 0, 2, 3).reshape(o, -1)  # (O, N*oh*ow)
    gw = (g_t @ cache["cols"]).reshape(w.shape)
    n, _, oh, ow = g.shape
    gcols = (w.reshape(o, -1).T @ g_t).reshape(w.shape[1], w.shape[2], w.shape[3], n, oh, ow)
    dxp = _scatter(cache["xp_shape"][2:], gcols, s, g.dtype)
    if pad:
        dxp = dxp[:, :, pad:-pad, pad:-pad]
    grads = {"weight": gw}
    if layer.bias:
        grads["bias"] = g_t.sum(axis=1)
    return grads, np.ascontiguousarray(dxp)


def conv2d_transpose_forward(layer, p, x):
    k, s, pad = layer.kernel, layer.stride, layer.padding
    n, cin, h, w = x.shape
    wt = p["weight"]
    x_t = x.transpose(1, 0, 2, 3).reshape(cin, -1)
    t = (wt.reshape(cin, -1).T @ x_t).reshape(wt.shape[1], k, k, n, h, w)
    full = _scatter(((h - 1) * s + k, (w - 1) * s + k), t, s, t.dtype)
    if pad:
        full = full[:, :, pad:-pad, pad:-pad]
    y = full + p["bias"][None, :, None, None] if layer.bias else full
    return np.ascontiguousarray(y), {"x_t": x_t, "x_shape": x.shape}


def conv2d_transpose_backward(layer, p, cache, g):
    k, s, pad = layer.kernel, layer.stride, layer.padding
    n, cin, h, w = cache["x_shape"]
    wt = p["weight"]
    cols = _im2col(_pad(g, pad), k, s, h, w)  # (N*h*w, Cout*k*k)
    gx = (cols @ wt.reshape(cin, -1).T).reshape(n, h, w, cin).transpose(0, 3, 1, 2)
    gw = (cache["x_t"] @ cols).reshape(wt.shape)
    grads = {"weight": gw}
    if layer.bias:
        grads["bias"] = g.sum(axis=(0, 2, 3))
    return grads, np.ascontiguousarray(gx)


def batchnorm2d_forward(layer, p, x, mode, buffers, index):
    gamma = p["weight"][None, :, None, None]
    beta = p["bias"][None, :, None, None]
    rm_key, rv_key = f"{index}.running_mean", f"{index}.running_var"
    if mode == "train":
        m = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
        unbiased = var * m / (m - 1) if m > 1 else var
        rm, rv = buffers[rm_key], buffers[rv_key]
        buffers[rm_key] = ((1 - BN_MOMENTUM) * rm + BN_MOMENTUM * mean).astype(rm.dtype)
        buffers[rv_key] = ((1 - BN_MOMENTUM) * rv + BN_MOMENTUM * unbiased).astype(rv.dtype)
    else:
        inv = 1.0 / np.sqrt(buffers[rv_key] + BN_EPS)
        xhat = (x - buffers[rm_key][None, :, None, None]) * inv[None, :, None, None]
    y = gamma * xhat + beta
    return y, {"xhat": xhat, "inv": inv, "mode": mode}


def batchnorm2d_backward(layer, p, cache, g):
    xhat, inv = cache["xhat"], cache["inv"]
    gw = (g * xhat).sum(axis=(0, 2, 3))
    gb = g.sum(axis=(0, 2, 3))
    dxhat = g * p["weight"][None, :, None, None]
    if cache["mode"] == "train":
        m = g.shape[0] * g.shape[2] * g.shape[3]
        s1 = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
        s2 = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
        gx = (inv[None, :, None, None] / m) * (m * dxhat - s1 - xhat * s2)
    else:
        gx = dxhat * inv[None, :, None, None]
    return {"weight": gw, "bias": gb}, gx


def maxpool2d_forward(layer, x):
    k = layer.kernel
    n, c, h, w = x.shape
    blocks = x.reshape(n, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // k, w // k, k * k)
    arg = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return y, {"arg": arg, "shape": x.shape}


def maxpool2d_backward(layer, cache, g):
    k = layer.kernel
    n, c, h, w = cache["shape"]
    blocks = np.zeros((n, c, h // k, w // k, k * k), dtype=g.dtype)
    np.put_along_axis(blocks, cache["arg"][..., None], g[..., None], axis=-1)
    gx = blocks.reshape(n, c, h // k, w // k, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    return gx


@dataclass
class ForwardCache:
    """Per-layer intermediates recorded by :func:`forward`."""

    spec: NetworkSpec
    entries: list
    input_shape: tuple
    output_shape: tuple


def forward(spec: NetworkSpec, params: ParamStore, x: np.ndarray, mode: str = "train"):
    """Run ``x`` (batch-first) through ``spec``. Returns ``(output, cache)``.

    In train mode batch norm normalises with batch statistics and updates the
    running statistics held in ``params.buffers``; eval mode mutates nothing.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x)
    if x.ndim < 1 or tuple(x.shape[1:]) != spec.input_shape:
        raise ShapeError(f"network expects (N, {', '.join(map(str, spec.input_shape))}), got {x.shape}", "input")
    entries = []
    h = x
    for i, layer in enumerate(spec.layers):
        kind = layer.kind
        p = params.layer(i) if layer.trainable else None
        if kind == "conv2d":
            h, c = conv2d_forward(layer, p, h)
        elif kind == "conv2d_transpose":
            h, c = conv2d_transpose_forward(layer, p, h)
        elif kind == "batchnorm2d":
            h, c = batchnorm2d_forward(layer, p, h, mode, params.buffers, i)
        elif kind == "linear":
            c = {"x": h}
            h = h @ p["weight"].T
            if layer.bias:
                h = h + p["bias"]
        elif kind == "leaky_relu":
            c = {"x": h}
            h = np.where(h > 0, h, h * np.asarray(layer.negative_slope, dtype=h.dtype))
        elif kind == "relu":
            c = {"x": h}
            h = np.maximum(h, 0)
        elif kind == "tanh":
            h = np.tanh(h)
            c = {"y": h}
        elif kind == "flatten":
            c = {"shape": h.shape}
            h = h.reshape(h.shape[0], -1)
        elif kind == "unflatten":
            c = {"shape": h.shape}
            h = h.reshape((h.shape[0],) + layer.shape)
        elif kind == "maxpool2d":
            h, c = maxpool2d_forward(layer, h)
        else:  # pragma: no cover - LayerSpec rejects unknown kinds
            raise ValueError(kind)
        entries.append(c)
    return h, ForwardCache(spec, entries, x.shape, h.shape)


def backward(spec: NetworkSpec, params: ParamStore, cache: ForwardCache, grad_output: np.ndarray):
    """Backpropagate ``grad_output`` through the cached forward pass.

    Returns ``(grads, grad_input)`` with ``grads`` keyed like ``params.params``.
    Does not touch ``params``.
    """
    if cache.spec is not spec and cache.spec != spec:
        raise CacheMismatchError("cache was produced by a different network spec")
    if len(cache.entries) != len(spec.layers):
        raise CacheMismatchError(f"cache holds {len(cache.entries)} layers, spec has {len(spec.layers)}")
    if tuple(grad_output.shape) != tuple(cache.output_shape):
        raise ShapeError(f"grad_output shape {grad_output.shape} != output shape {cache.output_shape}", "output")
    grads = {}
    g = grad_output
    for i in range(len(spec.layers) - 1, -1, -1):
        layer, c = spec.layers[i], cache.entries[i]
        kind = layer.kind
        p = params.layer(i) if layer.trainable else None
        if kind == "conv2d":
            lg, g = conv2d_backward(layer, p, c, g)
        elif kind == "conv2d_transpose":
            lg, g = conv2d_transpose_backward(layer, p, c, g)
        elif kind == "batchnorm2d":
            lg, g = batchnorm2d_backward(layer, p, c, g)
        elif kind == "linear":
            lg = {"weight": g.T @ c["x"]}
            if layer.bias:
                lg["bias"] = g.sum(axis=0)
            g = g @ p["weight"]
        else:
            lg = None
            if kind == "leaky_relu":
                g = np.where(c["x"] > 0, g, g * np.asarray(layer.negative_slope, dtype=g.dtype))
            elif kind == "relu":
                g = g * (c["x"] > 0)
            elif kind == "tanh":
                g = g * (1 - c["y"] ** 2)
            elif kind in ("flatten", "unflatten"):
                g = g.reshape(c["shape"])
            elif kind == "maxpool2d":
                g = maxpool2d_backward(layer, c, g)
        if lg:
            for name, value in lg.items():
                grads[f"{i}.{name}"] = value.astype(params.params[f"{i}.{name}"].dtype, copy=False)
    return grads, g
