"""Differentiable operators used by the Mbed and ATN stacks.

Spatial ops accept an optional leading batch axis: ``conv1d`` and
``maxpool1d`` take ``(C, L)`` or ``(N, C, L)``, ``dense`` takes ``(..., N_in)``
and ``gru`` takes ``(T, F)`` or ``(N, T, F)``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ArgumentError, DimensionError
from .tensor import Tensor, as_tensor, make_result


def _batched(x):
    """Return (array with batch axis, had_batch)."""
    return (x, True) if x.ndim == 3 else (x[None], False)


def conv1d(x, w, b, stride=1, padding=0):
    """Cross-correlate ``x`` (C_in, L) with ``w`` (C_out, C_in, K), add ``b``."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim not in (2, 3):
        raise DimensionError(f"conv1d input must be (C, L) or (N, C, L), got {x.shape}")
    if w.data.ndim != 3:
        raise DimensionError(f"conv1d kernels must be (C_out, C_in, K), got {w.shape}")
    if stride < 1 or padding < 0:
        raise ArgumentError(f"conv1d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    xb, batched = _batched(x.data)
    n, c_in, length = xb.shape
    c_out, c_w, k = w.shape
    if c_w != c_in:
        raise DimensionError(f"conv1d channel axis: input has {c_in} channels, kernels expect {c_w}")
    if b.shape != (c_out,):
        raise DimensionError(f"conv1d bias axis: expected ({c_out},), got {b.shape}")
    padded = length + 2 * padding
    if padded < k:
        raise DimensionError(f"conv1d length axis: padded length {padded} shorter than kernel {k}")
    l_out = (padded - k) // stride + 1

    xp = np.pad(xb, ((0, 0), (0, 0), (padding, padding))) if padding else xb
    cols = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :][:, :, :l_out, :]
    # (N, L_out, C_in*K) so one GEMM covers all positions
    cols2 = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(n * l_out, c_in * k)
    w2 = w.data.reshape(c_out, c_in * k)
    y = (cols2 @ w2.T).reshape(n, l_out, c_out).transpose(0, 2, 1) + b.data[None, :, None]
    y = np.ascontiguousarray(y)
    out_data = y if batched else y[0]

    def backward(g):
        gb = g if batched else g[None]
        g2 = gb.transpose(0, 2, 1).reshape(n * l_out, c_out)
        if w.requires_grad:
            w.accumulate((g2.T @ cols2).reshape(w.shape))
        if b.requires_grad:
            b.accumulate(gb.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = (g2 @ w2).reshape(n, l_out, c_in, k)
            dxp = np.zeros((n, c_in, padded), dtype=xb.dtype)
            span = stride * (l_out - 1) + 1
            for j in range(k):
                dxp[:, :, j:j + span:stride] += dcols[:, :, :, j].transpose(0, 2, 1)
            dx = dxp[:, :, padding:padding + length]
            x.accumulate(dx if batched else dx[0])

    return make_result(out_data, (x, w, b), backward)


def maxpool1d(x, window):
    """Non-overlapping max pooling along the last axis; remainder dropped."""
    x = as_tensor(x)
    if window < 1:
        raise ArgumentError(f"maxpool window must be positive, got {window}")
    length = x.shape[-1]
    if window > length:
        raise DimensionError(f"maxpool length axis: window {window} exceeds length {length}")
    l_out = length // window
    lead = x.shape[:-1]
    blocks = x.data[..., :l_out * window].reshape(*lead, l_out, window)
    idx = np.argmax(blocks, axis=-1)  # first index on ties
    y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gblocks = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gblocks, idx[..., None], g[..., None], axis=-1)
        dx = np.zeros(x.shape, dtype=g.dtype)
        dx[..., :l_out * window] = gblocks.reshape(*lead, l_out * window)
        x.accumulate(dx)

    return make_result(y, (x,), backward)


def dense(x, w, b):
    """Affine map ``w @ x + b`` over the last axis of ``x``."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.data.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise DimensionError(f"dense input axis: width {x.shape[-1]} does not match weight {w.shape}")
    if b.shape != (w.shape[0],):
        raise DimensionError(f"dense output axis: bias {b.shape} does not match weight {w.shape}")
    y = x.data @ w.data.T + b.data

    def backward(g):
        if w.requires_grad:
            g2 = g.reshape(-1, w.shape[0])
            w.accumulate(g2.T @ x.data.reshape(-1, w.shape[1]))
        if b.requires_grad:
            b.accumulate(g.reshape(-1, w.shape[0]).sum(axis=0))
        if x.requires_grad:
            x.accumulate(g @ w.data)

    return make_result(y, (x, w, b), backward)


def prelu(x, a):
    """x for x > 0, a*x otherwise; ``a`` is a single learnable slope."""
    x, a = as_tensor(x), as_tensor(a)
    pos = x.data > 0
    slope = a.data.reshape(())
    y = np.where(pos, x.data, slope * x.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate(np.where(pos, g, slope * g))
        if a.requires_grad:
            a.accumulate(np.sum(np.where(pos, 0.0, g * x.data)).reshape(a.shape))

    return make_result(y, (x, a), backward)


def relu(x):
    x = as_tensor(x)
    pos = x.data > 0
    y = np.maximum(x.data, x.dtype.type(0))  # keeps NaN visible

    def backward(g):
        x.accumulate(np.where(pos, g, 0.0))

    return make_result(y, (x,), backward)


def _sigmoid(z):
    # split by sign so neither branch overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(z):
    """Numerically stable logistic function on a plain array."""
    return _sigmoid(np.asarray(z))


def silu(x):
    """x * sigmoid(x)."""
    x = as_tensor(x)
    s = _sigmoid(x.data)
    y = x.data * s

    def backward(g):
        x.accumulate(g * (s + x.data * s * (1.0 - s)))

    return make_result(y, (x,), backward)


def dropout(x, p, training, rng):
    """Inverted dropout: identity in eval mode, scale survivors by 1/(1-p) in train mode."""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ArgumentError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype)
    scale = x.dtype.type(1.0 / (1.0 - p))
    mask = keep * scale
    y = x.data * mask

    def backward(g):
        x.accumulate(g * mask)

    return make_result(y, (x,), backward)


def flatten(x, batched=False):
    """Collapse all non-batch axes (channel-major order)."""
    x = as_tensor(x)
    shape = x.shape
    y = x.data.reshape(shape[0], -1) if batched else x.data.reshape(-1)

    def backward(g):
        x.accumulate(g.reshape(shape))

    return make_result(y, (x,), backward)


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    y = x.data.reshape(shape)

    def backward(g):
        x.accumulate(g.reshape(old))

    return make_result(y, (x,), backward)


def concat(parts, axis=-1):
    parts = [as_tensor(p) for p in parts]
    y = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                p.accumulate(g[tuple(sl)])

    return make_result(y, parts, backward)


def take_last(x, axis):
    """Select the final index along ``axis`` (many-to-one readout)."""
    x = as_tensor(x)
    y = np.take(x.data, -1, axis=axis)

    def backward(g):
        dx = np.zeros(x.shape, dtype=g.dtype)
        sl = [slice(None)] * x.data.ndim
        sl[axis] = -1
        dx[tuple(sl)] = g
        x.accumulate(dx)

    return make_result(y, (x,), backward)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean cross-entropy of softmax(logits) against integer labels.

    ``logits`` is (C,) with a scalar label, or (N, C) with N labels.
    Returns ``(loss, probs)`` where ``loss`` is a scalar Tensor.
    """
    logits = as_tensor(logits)
    single = logits.data.ndim == 1
    z = logits.data[None] if single else logits.data
    lab = np.atleast_1d(np.asarray(labels))
    n, c = z.shape
    if lab.shape != (n,):
        raise DimensionError(f"softmax_xent batch axis: {n} logits rows vs {lab.shape} labels")
    if np.any(lab < 0) or np.any(lab >= c):
        raise ArgumentError(f"label out of range [0, {c}): {lab.tolist()}")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    probs = np.exp(logp)
    loss = -logp[np.arange(n), lab].mean()

    def backward(g):
        d = probs.copy()
        d[np.arange(n), lab] -= 1.0
        d *= g / n
        logits.accumulate(d[0] if single else d)

    out = make_result(np.asarray(loss, dtype=z.dtype), (logits,), backward)
    return out, (probs[0] if single else probs)
