"""Hot inner loops.

Each kernel exists as a plain-numpy function (``*_py``) and a numba build.
The dispatched name used by the rest of the package is the numba build unless
``RTFN_NUMBA=0``, except where ``benchmarks/bench_kernels.py`` shows numpy
winning: the LSTM recurrences spend their time in ``tanh``/``exp``, which
numpy vectorizes and numba (without SVML) evaluates one scalar at a time.
Their source still compiles unchanged under numba so the two can be compared.

LSTM arrays are group-major, ``[G, T, N, ...]``: several independent LSTMs
over the same sequence advance in one pass, and each group's slab stays
contiguous for the weight-gradient GEMMs. Gate layout on the last axis is
``[input | forget | output | candidate]``, each block ``H`` wide.
"""
import numpy as np

from rtfn._accel import ENABLE_NUMBA, compiled


def lstm_forward_seq_py(xw, wh_t, h0, c0):
    """Run the recurrence over time.

    xw: [G, T, N, 4H] input projections with bias already added.
    wh_t: [G, H, 4H] recurrent weights, transposed.
    h0, c0: [G, N, H].
    Returns hidden states, cell states, tanh of the cell states and gate
    activations, each [G, T, N, .].
    """
    G, T, N, H4 = xw.shape
    H = H4 // 4
    h_all = np.empty((G, T, N, H))
    c_all = np.empty((G, T, N, H))
    tc_all = np.empty((G, T, N, H))
    acts = np.empty((G, T, N, H4))
    tmp = np.empty((G, N, H))
    for t in range(T):
        z = acts[:, t]
        for g in range(G):
            if t == 0:
                z[g] = np.dot(h0[g], wh_t[g])
            else:
                z[g] = np.dot(h_all[g, t - 1], wh_t[g])
        z += xw[:, t]
        # sigmoid(x) = (1 + tanh(x/2)) / 2: no overflow for large |x|
        sig = z[:, :, : 3 * H]
        sig *= 0.5
        np.tanh(sig, sig)
        sig *= 0.5
        sig += 0.5
        cand = z[:, :, 3 * H :]
        np.tanh(cand, cand)
        c = c_all[:, t]
        if t == 0:
            np.multiply(z[:, :, H : 2 * H], c0, c)
        else:
            np.multiply(z[:, :, H : 2 * H], c_all[:, t - 1], c)
        np.multiply(z[:, :, :H], cand, tmp)
        c += tmp
        tc = tc_all[:, t]
        np.tanh(c, tc)
        np.multiply(z[:, :, 2 * H : 3 * H], tc, h_all[:, t])
    return h_all, c_all, tc_all, acts


def lstm_backward_seq_py(dh_all, acts, c_all, tc_all, c0, wh):
    """Backpropagation through time.

    dh_all: [G, T, N, H] upstream gradient on every hidden state.
    wh: [G, 4H, H] recurrent weights (not transposed).
    Returns gradients on gate pre-activations [G, T, N, 4H], on h0 and on c0.
    """
    G, T, N, H = dh_all.shape
    dz = np.empty((G, T, N, 4 * H))
    dh = np.empty((G, N, H))
    dc = np.zeros((G, N, H))
    dh_next = np.zeros((G, N, H))
    tmp = np.empty((G, N, H))
    for t in range(T - 1, -1, -1):
        u = acts[:, t, :, :H]
        f = acts[:, t, :, H : 2 * H]
        o = acts[:, t, :, 2 * H : 3 * H]
        cand = acts[:, t, :, 3 * H :]
        tc = tc_all[:, t]
        dzt = dz[:, t]
        np.add(dh_all[:, t], dh_next, dh)
        # dc += dh * o * (1 - tc^2)   (dc holds the carry from step t+1)
        np.multiply(tc, tc, tmp)
        np.subtract(1.0, tmp, tmp)
        tmp *= o
        tmp *= dh
        dc += tmp
        # output gate
        do = dzt[:, :, 2 * H : 3 * H]
        np.subtract(1.0, o, do)
        do *= o
        do *= tc
        do *= dh
        # input gate
        du = dzt[:, :, :H]
        np.subtract(1.0, u, du)
        du *= u
        du *= cand
        du *= dc
        # forget gate
        df = dzt[:, :, H : 2 * H]
        np.subtract(1.0, f, df)
        df *= f
        df *= dc
        if t > 0:
            df *= c_all[:, t - 1]
        else:
            df *= c0
        # candidate
        dg = dzt[:, :, 3 * H :]
        np.multiply(cand, cand, dg)
        np.subtract(1.0, dg, dg)
        dg *= u
        dg *= dc
        dc *= f
        for g in range(G):
            dh_next[g] = np.dot(dzt[g], wh[g])
    return dz, dh_next, dc


def assign_nearest_py(points, centroids):
    """Index of the nearest centroid and the squared distance to it, per point."""
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(points.shape[0]), labels]


def _assign_nearest_loops(points, centroids):
    s, d = points.shape
    k = centroids.shape[0]
    labels = np.zeros(s, dtype=np.int64)
    best = np.empty(s)
    for i in range(s):
        best_d = np.inf
        best_j = 0
        for j in range(k):
            acc = 0.0
            for m in range(d):
                diff = points[i, m] - centroids[j, m]
                acc += diff * diff
            if acc < best_d:
                best_d = acc
                best_j = j
        labels[i] = best_j
        best[i] = best_d
    return labels, best


def pair_agreement_py(a, b):
    """Count pairs i < j grouped together in both labelings, and apart in both."""
    same_a = a[:, None] == a[None, :]
    same_b = b[:, None] == b[None, :]
    upper = np.triu(np.ones(same_a.shape, dtype=bool), k=1)
    both = int((same_a & same_b & upper).sum())
    neither = int((~same_a & ~same_b & upper).sum())
    return both, neither


def _pair_agreement_loops(a, b):
    s = a.shape[0]
    both = 0
    neither = 0
    for i in range(s):
        for j in range(i + 1, s):
            sa = a[i] == a[j]
            sb = b[i] == b[j]
            if sa and sb:
                both += 1
            elif not sa and not sb:
                neither += 1
    return both, neither


_lstm_forward_nb = compiled(lstm_forward_seq_py)
_lstm_backward_nb = compiled(lstm_backward_seq_py)
_assign_nearest_nb = compiled(_assign_nearest_loops)
_pair_agreement_nb = compiled(_pair_agreement_loops)

lstm_forward_seq = lstm_forward_seq_py
lstm_backward_seq = lstm_backward_seq_py
assign_nearest = _assign_nearest_nb if ENABLE_NUMBA else assign_nearest_py
pair_agreement = _pair_agreement_nb if ENABLE_NUMBA else pair_agreement_py

# (numpy, numba) pairs for the benchmark and the equivalence tests.
KERNEL_PAIRS = {
    "lstm_forward_seq": (lstm_forward_seq_py, _lstm_forward_nb),
    "lstm_backward_seq": (lstm_backward_seq_py, _lstm_backward_nb),
    "assign_nearest": (assign_nearest_py, _assign_nearest_nb),
    "pair_agreement": (pair_agreement_py, _pair_agreement_nb),
}
