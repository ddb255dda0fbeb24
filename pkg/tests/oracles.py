"""Brute-force reference implementations, written with explicit loops.

Nothing here imports from ``rflab.engine``; these are the independent side
of every oracle comparison.
"""
import math

import numpy as np


def conv1d_loop(x, w, b, stride, padding):
    c_in, length = x.shape
    c_out, _, k = w.shape
    xp = [[0.0] * (length + 2 * padding) for _ in range(c_in)]
    for c in range(c_in):
        for i in range(length):
            xp[c][i + padding] = float(x[c, i])
    l_out = (length + 2 * padding - k) // stride + 1
    out = np.zeros((c_out, l_out))
    for o in range(c_out):
        for j in range(l_out):
            acc = float(b[o])
            for c in range(c_in):
                for q in range(k):
                    acc += float(w[o, c, q]) * xp[c][j * stride + q]
            out[o, j] = acc
    return out


def maxpool_loop(x, window):
    c, length = x.shape
    l_out = length // window
    out = np.zeros((c, l_out))
    for ch in range(c):
        for j in range(l_out):
            best = x[ch, j * window]
            for q in range(1, window):
                if x[ch, j * window + q] > best:
                    best = x[ch, j * window + q]
            out[ch, j] = best
    return out


def dense_loop(x, w, b):
    n_out, n_in = w.shape
    out = np.zeros(n_out)
    for o in range(n_out):
        acc = float(b[o])
        for i in range(n_in):
            acc += float(w[o, i]) * float(x[i])
        out[o] = acc
    return out


def _sig(z):
    return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


def silu_loop(x):
    return np.array([v * (1.0 / (1.0 + math.exp(-v))) for v in np.ravel(x)]).reshape(np.shape(x))


def prelu_loop(x, a):
    return np.array([v if v > 0 else a * v for v in np.ravel(x)]).reshape(np.shape(x))


def gru_cell_loop(x, h, Wu, Wr, Wh, Ru, Rr, Rh, bu, br, bh):
    """One GRU step written gate by gate, scalar by scalar."""
    hsz = len(h)
    f = len(x)

    def affine(W, R, bvec, hv, i):
        acc = float(bvec[i])
        for j in range(f):
            acc += W[i, j] * x[j]
        for j in range(hsz):
            acc += R[i, j] * hv[j]
        return acc

    u = [_sig(affine(Wu, Ru, bu, h, i)) for i in range(hsz)]
    r = [_sig(affine(Wr, Rr, br, h, i)) for i in range(hsz)]
    rh = [r[i] * h[i] for i in range(hsz)]
    c = [math.tanh(affine(Wh, Rh, bh, rh, i)) for i in range(hsz)]
    return np.array([(1 - u[i]) * h[i] + u[i] * c[i] for i in range(hsz)])


def gru_stack_loop(seq, layers, h0):
    """layers: list of dicts with Wu..bh arrays; returns (outputs, hT)."""
    inp = [np.asarray(row, dtype=float) for row in seq]
    finals = []
    for li, p in enumerate(layers):
        h = np.array(h0[li], dtype=float)
        outs = []
        for x in inp:
            h = gru_cell_loop(x, h, p["Wu"], p["Wr"], p["Wh"], p["Ru"], p["Rr"], p["Rh"], p["bu"], p["br"], p["bh"])
            outs.append(h)
        finals.append(h)
        inp = outs
    return np.array(inp), np.array(finals)


def adam_scalar(w, grad_fn, steps, lr=1e-4, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    trace = []
    for t in range(1, steps + 1):
        g = grad_fn(w)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        w = w - lr * mhat / (math.sqrt(vhat) + eps)
        trace.append(w)
    return trace


def central_diff(f, x, h=1e-6):
    """Numerical gradient of scalar ``f`` at array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))
