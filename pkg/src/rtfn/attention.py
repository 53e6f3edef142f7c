"""LSTM, LSTM-driven attention, and scaled self-attention over the time axis.

Sequence tensors are batch-major ``[N, T, D]``.
"""
from __future__ import annotations

import numpy as np

from rtfn import kernels
from rtfn.layers import Module, _uniform
from rtfn.tensor import DimensionError, softmax_rows, softmax_rows_backward

GATES = ("u", "f", "o", "c")  # input, forget, output, cell candidate


class Lstm(Module):
    """Single-layer LSTM returning every hidden state.

    Each gate has its own input matrix ``W_<g>x`` [H, D], recurrent matrix
    ``W_<g>h`` [H, H] and bias ``b_<g>``; the forget bias starts at 1.
    """

    def __init__(self, n_in, hidden, rng):
        super().__init__()
        self.n_in, self.hidden = n_in, hidden
        for g in GATES:
            self.add_param(f"W_{g}x", _uniform(rng, (hidden, n_in), n_in))
        for g in GATES:
            self.add_param(f"W_{g}h", _uniform(rng, (hidden, hidden), hidden))
        for g in GATES:
            self.add_param(f"b_{g}", np.full(hidden, 1.0 if g == "f" else 0.0), decay=False)

    def forward(self, x, h0=None, c0=None):
        h0 = None if h0 is None else np.asarray(h0, dtype=np.float64)[None]
        c0 = None if c0 is None else np.asarray(c0, dtype=np.float64)[None]
        (out,), self._cache = run_lstms([self], x, h0, c0)
        return out

    def backward(self, g):
        dx, dh0, dc0 = backward_lstms([self], [g], self._cache)
        self.dh0, self.dc0 = dh0[0], dc0[0]
        return dx


def run_lstms(lstms, x, h0=None, c0=None):
    """Advance several LSTMs over the same input [N, T, D] in one recurrence.

    Returns the per-LSTM hidden sequences [N, T, H] and a cache for
    ``backward_lstms``.
    """
    first = lstms[0]
    D, H = first.n_in, first.hidden
    if x.ndim != 3 or x.shape[2] != D:
        raise DimensionError(f"Lstm: expected [N, T, {D}], got {x.shape}")
    N, T, _ = x.shape
    if T < 1:
        raise DimensionError("Lstm: sequence must have at least one step")
    G = len(lstms)
    wx = np.stack([np.concatenate([m._params[f"W_{g}x"].value for g in GATES]) for m in lstms])  # [G, 4H, D]
    wh = np.stack([np.concatenate([m._params[f"W_{g}h"].value for g in GATES]) for m in lstms])  # [G, 4H, H]
    b = np.stack([np.concatenate([m._params[f"b_{g}"].value for g in GATES]) for m in lstms])
    h0 = np.zeros((G, N, H)) if h0 is None else np.ascontiguousarray(np.broadcast_to(h0, (G, N, H)))
    c0 = np.zeros((G, N, H)) if c0 is None else np.ascontiguousarray(np.broadcast_to(c0, (G, N, H)))
    x_tm = np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(T * N, D)
    xw = np.matmul(x_tm, wx.transpose(0, 2, 1))  # [G, T*N, 4H]
    xw += b[:, None, :]
    h_all, c_all, tc_all, acts = kernels.lstm_forward_seq(
        xw.reshape(G, T, N, 4 * H), np.ascontiguousarray(wh.transpose(0, 2, 1)), h0, c0
    )
    outs = [h_all[i].transpose(1, 0, 2) for i in range(G)]
    return outs, (x_tm, (N, T, D), h0, c0, h_all, c_all, tc_all, acts, wx, wh)


def backward_lstms(lstms, grads, cache):
    """Gradients for ``run_lstms``; accumulates parameter grads and returns (dx, dh0, dc0)."""
    x_tm, (N, T, D), h0, c0, h_all, c_all, tc_all, acts, wx, wh = cache
    G = len(lstms)
    H = lstms[0].hidden
    dh_all = np.stack([g.transpose(1, 0, 2) for g in grads])
    dz, dh0, dc0 = kernels.lstm_backward_seq(dh_all, acts, c_all, tc_all, c0, wh)
    dx = np.zeros((T * N, D))
    for i, m in enumerate(lstms):
        dzi = dz[i].reshape(T * N, 4 * H)
        dwx = dzi.T @ x_tm
        # h_{t-1} pairs with dz_t; the first step sees h0
        dwh = dz[i, 1:].reshape(-1, 4 * H).T @ h_all[i, :-1].reshape(-1, H) + dz[i, 0].T @ h0[i]
        db = dzi.sum(axis=0)
        dx += dzi @ wx[i]
        for j, gate in enumerate(GATES):
            rows = slice(j * H, (j + 1) * H)
            m._params[f"W_{gate}x"].grad += dwx[rows]
            m._params[f"W_{gate}h"].grad += dwh[rows]
            m._params[f"b_{gate}"].grad += db[rows]
    return np.ascontiguousarray(dx.reshape(T, N, D).transpose(1, 0, 2)), dh0, dc0


class LstmAttention(Module):
    """Three independent LSTMs supply query, key and value; unscaled dot-product attention."""

    def __init__(self, n_in, hidden, rng):
        super().__init__()
        self.lstm_q = self.add_child("lstm_q", Lstm(n_in, hidden, rng))
        self.lstm_k = self.add_child("lstm_k", Lstm(n_in, hidden, rng))
        self.lstm_v = self.add_child("lstm_v", Lstm(n_in, hidden, rng))
        self.weights = None

    def forward(self, x):
        (q, k, v), lstm_cache = run_lstms([self.lstm_q, self.lstm_k, self.lstm_v], x)
        a = softmax_rows(q @ k.transpose(0, 2, 1))
        self.weights = a
        self._cache = (q, k, v, a, lstm_cache)
        return a @ v

    def backward(self, g):
        q, k, v, a, lstm_cache = self._cache
        dv = a.transpose(0, 2, 1) @ g
        ds = softmax_rows_backward(g @ v.transpose(0, 2, 1), a)
        dq = ds @ k
        dk = ds.transpose(0, 2, 1) @ q
        dx, _, _ = backward_lstms([self.lstm_q, self.lstm_k, self.lstm_v], [dq, dk, dv], lstm_cache)
        return dx


class Lstman(Module):
    """A chain of LstmAttention layers; each consumes the previous layer's output."""

    def __init__(self, n_in, hidden, depth, rng):
        super().__init__()
        if depth < 1:
            raise ValueError("Lstman needs at least one layer")
        self.layers = [
            self.add_child(f"layer{i}", LstmAttention(n_in if i == 0 else hidden, hidden, rng)) for i in range(depth)
        ]

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def backward(self, g):
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g


class SelfAttention(Module):
    """Scaled dot-product self-attention with learned square Q/K/V projections."""

    def __init__(self, dim, rng):
        super().__init__()
        self.dim = dim
        self.scale = 1.0 / np.sqrt(dim)
        self.w_q = self.add_param("w_q", _uniform(rng, (dim, dim), dim))
        self.w_k = self.add_param("w_k", _uniform(rng, (dim, dim), dim))
        self.w_v = self.add_param("w_v", _uniform(rng, (dim, dim), dim))
        self.weights = None

    def forward(self, x):
        if x.shape[-1] != self.dim:
            raise DimensionError(f"SelfAttention: expected feature dim {self.dim}, got shape {x.shape}")
        q = x @ self.w_q.value.T
        k = x @ self.w_k.value.T
        v = x @ self.w_v.value.T
        a = softmax_rows((q @ k.transpose(0, 2, 1)) * self.scale)
        self.weights = a
        self._cache = (x, q, k, v, a)
        return a @ v

    def backward(self, g):
        x, q, k, v, a = self._cache
        d = self.dim
        dv = a.transpose(0, 2, 1) @ g
        ds = softmax_rows_backward(g @ v.transpose(0, 2, 1), a) * self.scale
        dq = ds @ k
        dk = ds.transpose(0, 2, 1) @ q
        x2 = x.reshape(-1, d)
        self.w_q.grad += dq.reshape(-1, d).T @ x2
        self.w_k.grad += dk.reshape(-1, d).T @ x2
        self.w_v.grad += dv.reshape(-1, d).T @ x2
        return dq @ self.w_q.value + dk @ self.w_k.value + dv @ self.w_v.value
