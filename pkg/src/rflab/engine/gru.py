"""Stacked GRU with back-propagation through time.

Gate equations per layer, with ``*`` elementwise::

    u_t = sigmoid(W_u x_t + R_u h_{t-1} + b_u)
    r_t = sigmoid(W_r x_t + R_r h_{t-1} + b_r)
    c_t = tanh(W_h x_t + R_h (r_t * h_{t-1}) + b_h)
    h_t = (1 - u_t) * h_{t-1} + u_t * c_t

Each layer stores its matrices stacked in gate order (u, r, h): ``W`` is
(3H, F), ``R`` is (3H, H), ``b`` is (3H,).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ArgumentError, DimensionError
from .ops import _sigmoid
from .tensor import Tensor, as_tensor, make_result


@dataclass
class GruLayer:
    W: Tensor
    R: Tensor
    b: Tensor

    @property
    def hidden_size(self):
        return self.R.shape[1]

    @property
    def input_size(self):
        return self.W.shape[1]

    def gate(self, name):
        """Return (W_g, R_g, b_g) views for gate ``u``, ``r`` or ``h``."""
        k = "urh".index(name)
        h = self.hidden_size
        sl = slice(k * h, (k + 1) * h)
        return self.W.data[sl], self.R.data[sl], self.b.data[sl]


@dataclass
class GruParams:
    layers: list

    @property
    def hidden_size(self):
        return self.layers[0].hidden_size

    @property
    def num_layers(self):
        return len(self.layers)

    def tensors(self):
        return [t for layer in self.layers for t in (layer.W, layer.R, layer.b)]

    @classmethod
    def init(cls, input_size, hidden_size, num_layers, rng, dtype=np.float64):
        """Uniform(-1/sqrt(H), 1/sqrt(H)) initialization for every matrix and bias."""
        if hidden_size < 1 or num_layers < 1 or input_size < 1:
            raise ArgumentError("GRU sizes must be positive")
        bound = 1.0 / np.sqrt(hidden_size)
        layers = []
        for i in range(num_layers):
            f = input_size if i == 0 else hidden_size
            mk = lambda *s: Tensor(rng.uniform(-bound, bound, size=s).astype(dtype), requires_grad=True)
            layers.append(GruLayer(W=mk(3 * hidden_size, f), R=mk(3 * hidden_size, hidden_size), b=mk(3 * hidden_size)))
        return cls(layers)


def _check(params, feat):
    h = params.hidden_size
    for i, layer in enumerate(params.layers):
        want = feat if i == 0 else h
        if layer.W.shape != (3 * h, want):
            raise DimensionError(f"GRU layer {i} input axis: W is {layer.W.shape}, expected {(3 * h, want)}")
        if layer.R.shape != (3 * h, h) or layer.b.shape != (3 * h,):
            raise DimensionError(f"GRU layer {i} hidden axis: R {layer.R.shape}, b {layer.b.shape}")


def _layer_forward(x, W, R, b, h0):
    """x (N, T, F); returns hs (N, T+1, H) plus cached gates."""
    n, t_len, _ = x.shape
    hsz = R.shape[1]
    xp = x @ W.T + b  # (N, T, 3H)
    R_ur = R[:2 * hsz].T
    R_h = R[2 * hsz:].T
    hs = np.empty((n, t_len + 1, hsz), dtype=x.dtype)
    us = np.empty((n, t_len, hsz), dtype=x.dtype)
    rs = np.empty_like(us)
    cs = np.empty_like(us)
    h = h0
    hs[:, 0] = h
    for t in range(t_len):
        a = xp[:, t]
        ur = _sigmoid(a[:, :2 * hsz] + h @ R_ur)
        u = ur[:, :hsz]
        r = ur[:, hsz:]
        c = np.tanh(a[:, 2 * hsz:] + (r * h) @ R_h)
        h = (1.0 - u) * h + u * c
        us[:, t], rs[:, t], cs[:, t] = u, r, c
        hs[:, t + 1] = h
    return hs, us, rs, cs


def _layer_backward(dout, x, W, R, hs, us, rs, cs):
    """dout (N, T, H) gradient on layer outputs; returns dx, dW, dR, db, dh0."""
    n, t_len, hsz = dout.shape
    R_u, R_r, R_h = R[:hsz], R[hsz:2 * hsz], R[2 * hsz:]
    da = np.empty((n, t_len, 3 * hsz), dtype=dout.dtype)
    dh_next = np.zeros((n, hsz), dtype=dout.dtype)
    for t in range(t_len - 1, -1, -1):
        h_prev = hs[:, t]
        u, r, c = us[:, t], rs[:, t], cs[:, t]
        dh = dout[:, t] + dh_next
        dc = dh * u
        du = dh * (c - h_prev)
        dac = dc * (1.0 - c * c)
        drh = dac @ R_h
        dar = drh * h_prev * r * (1.0 - r)
        dau = du * u * (1.0 - u)
        dh_next = dh * (1.0 - u) + drh * r + dau @ R_u + dar @ R_r
        da[:, t, :hsz] = dau
        da[:, t, hsz:2 * hsz] = dar
        da[:, t, 2 * hsz:] = dac
    h_prev_all = hs[:, :-1].reshape(-1, hsz)
    da2 = da.reshape(-1, 3 * hsz)
    dR = np.empty_like(R)
    dR[:2 * hsz] = da2[:, :2 * hsz].T @ h_prev_all
    dR[2 * hsz:] = da2[:, 2 * hsz:].T @ (rs.reshape(-1, hsz) * h_prev_all)
    dW = da2.T @ x.reshape(-1, x.shape[-1])
    db = da2.sum(axis=0)
    dx = da @ W
    return dx, dW, dR, db, dh_next


def gru(seq, params, h0=None, dropout=0.0, training=False, rng=None):
    """Run a stacked GRU over ``seq`` (T, F) or (N, T, F).

    Returns the last layer's outputs at every step as a Tensor shaped like
    the input with F replaced by H. The final hidden state of every layer is
    attached as ``out.hT`` (plain array, layers x [N x] H). Dropout of rate
    ``dropout`` is applied between layers in training mode only.
    """
    seq = as_tensor(seq)
    if seq.data.ndim not in (2, 3):
        raise DimensionError(f"GRU input must be (T, F) or (N, T, F), got {seq.shape}")
    batched = seq.data.ndim == 3
    x = seq.data if batched else seq.data[None]
    n, _, feat = x.shape
    _check(params, feat)
    hsz, n_layers = params.hidden_size, params.num_layers
    if not 0.0 <= dropout < 1.0:
        raise ArgumentError(f"dropout rate must be in [0, 1), got {dropout}")
    if h0 is None:
        h0 = Tensor(np.zeros((n_layers, n, hsz) if batched else (n_layers, hsz), dtype=x.dtype))
    h0 = as_tensor(h0)
    h0b = h0.data if batched else h0.data[:, None]
    if h0b.shape != (n_layers, n, hsz):
        raise DimensionError(f"GRU h0 axis: got {h0.shape}, expected layers x hidden = {(n_layers, hsz)}")

    caches = []
    masks = []
    inp = x
    h_last = []
    for i, layer in enumerate(params.layers):
        hs, us, rs, cs = _layer_forward(inp, layer.W.data, layer.R.data, layer.b.data, h0b[i])
        caches.append((inp, hs, us, rs, cs))
        h_last.append(hs[:, -1])
        out = hs[:, 1:]
        if training and dropout > 0.0 and i < n_layers - 1:
            mask = (rng.random(out.shape) >= dropout).astype(x.dtype) / x.dtype.type(1.0 - dropout)
            out = out * mask
        else:
            mask = None
        masks.append(mask)
        inp = out
    y = np.ascontiguousarray(inp)
    hT = np.stack(h_last)

    def backward(g):
        dout = g if batched else g[None]
        dh0 = np.empty_like(h0b)
        for i in range(n_layers - 1, -1, -1):
            layer = params.layers[i]
            xin, hs, us, rs, cs = caches[i]
            dx, dW, dR, db, dh0[i] = _layer_backward(dout, xin, layer.W.data, layer.R.data, hs, us, rs, cs)
            for p, d in ((layer.W, dW), (layer.R, dR), (layer.b, db)):
                if p.requires_grad:
                    p.accumulate(d)
            if i > 0:
                dout = dx * masks[i - 1] if masks[i - 1] is not None else dx
            elif seq.requires_grad:
                seq.accumulate(dx if batched else dx[0])
        if h0.requires_grad:
            h0.accumulate(dh0 if batched else dh0[:, 0])

    out = make_result(y if batched else y[0], (seq, h0, *params.tensors()), backward)
    out.hT = hT if batched else hT[:, 0]
    return out


def gru_forward(seq, params, h0=None):
    """Plain forward pass returning ``(outputs, hT)`` as arrays."""
    seq_arr = np.asarray(seq.data if isinstance(seq, Tensor) else seq)
    batched = seq_arr.ndim == 3
    x = seq_arr if batched else seq_arr[None]
    n, _, feat = x.shape
    _check(params, feat)
    hsz, n_layers = params.hidden_size, params.num_layers
    if h0 is None:
        h0b = np.zeros((n_layers, n, hsz), dtype=x.dtype)
    else:
        h0a = np.asarray(h0.data if isinstance(h0, Tensor) else h0)
        h0b = h0a if batched else h0a[:, None]
        if h0b.shape != (n_layers, n, hsz):
            raise DimensionError(f"GRU h0 axis: got {h0a.shape}, expected {(n_layers, hsz)}")
    inp = x
    last = []
    for i, layer in enumerate(params.layers):
        hs = _layer_forward(inp, layer.W.data, layer.R.data, layer.b.data, h0b[i])[0]
        last.append(hs[:, -1])
        inp = hs[:, 1:]
    outputs, hT = inp, np.stack(last)
    return (outputs, hT) if batched else (outputs[0], hT[:, 0])
