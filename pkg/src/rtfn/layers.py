"""Feed-forward building blocks with hand-written backward passes.

Convolutional layers work channels-last, on [N, L, C] arrays. All layers
share the ``Module`` protocol: ``forward(x)`` caches whatever the
matching ``backward(g)`` needs, ``backward`` accumulates into the parameters'
``grad`` buffers and returns the gradient with respect to ``x``. The cache
holds only the most recent forward call.
"""
from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from rtfn.tensor import DimensionError, Parameter, concat, concat_backward


class DegenerateBatchError(ValueError):
    """Batch statistics need at least two values per channel."""


class Module:
    """Parameter/child registry plus the train/eval flag."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, Module] = {}
        self.training = True

    def add_param(self, name, value, decay=True) -> Parameter:
        p = Parameter(name, value, decay=decay)
        self._params[name] = p
        return p

    def add_child(self, name, module):
        self._children[name] = module
        return module

    def named_parameters(self, prefix="") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_buffers(self, prefix="") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self, prefix=""):
        """Stamp each Parameter with its dotted path."""
        for name, p in self.named_parameters(prefix):
            p.name = name
        return self

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode=True):
        self.training = mode
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def __call__(self, x):
        return self.forward(x)


def _uniform(rng, shape, fan_in):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def same_padding(k):
    """(left, right) zero padding that keeps the length at stride 1."""
    return (k - 1) // 2, k // 2


def _conv_forward(x, w, b):
    """Channels-last 'same' convolution; x [N, L, C_in], w [C_out, C_in, k] -> [N, L, C_out].

    The padded batch is flattened to one long [N*(L+k-1), C_in] matrix so each
    kernel tap is a single GEMM on a contiguous slice. Rows that straddle two
    samples are computed and then discarded.
    """
    N, L, C = x.shape
    co, ci, k = w.shape
    if C != ci:
        raise DimensionError(f"conv1d: input has {C} channels, weight expects {ci}")
    pl, _ = same_padding(k)
    lp = L + k - 1
    xp = np.zeros((N, lp, C))
    xp[:, pl : pl + L] = x
    flat = xp.reshape(N * lp, C)
    rows = N * lp - k + 1
    taps = np.ascontiguousarray(w.transpose(2, 1, 0))  # [k, C_in, C_out]
    out = np.zeros((N * lp, co))
    acc = out[:rows]
    for j in range(k):
        acc += flat[j : j + rows] @ taps[j]
    y = out.reshape(N, lp, co)[:, :L] + b
    return y, (flat, taps, x.shape)


def _conv_backward(g, cache):
    flat, taps, (N, L, C) = cache
    k, _, co = taps.shape
    lp = L + k - 1
    rows = N * lp - k + 1
    gfull = np.zeros((N, lp, co))
    gfull[:, :L] = g
    gf = gfull.reshape(N * lp, co)[:rows]
    dw = np.empty_like(taps)
    dflat = np.zeros_like(flat)
    for j in range(k):
        dw[j] = flat[j : j + rows].T @ gf
        dflat[j : j + rows] += gf @ taps[j].T
    pl, _ = same_padding(k)
    dx = dflat.reshape(N, lp, C)[:, pl : pl + L].copy()
    return dx, dw.transpose(2, 1, 0), g.sum(axis=(0, 1))


def conv1d(x, w, b):
    """Stride-1 'same' convolution of x [C_in, L] (or a batch [N, C_in, L]) with w [C_out, C_in, k]."""
    single = x.ndim == 2
    xb = x[None] if single else x
    y, _ = _conv_forward(np.ascontiguousarray(xb.transpose(0, 2, 1)), w, b)
    y = np.ascontiguousarray(y.transpose(0, 2, 1))
    return y[0] if single else y


def leaky_relu(x, alpha=0.1):
    return np.where(x >= 0, x, alpha * x)


class Conv1d(Module):
    """Channels-last convolution layer: [N, L, C_in] -> [N, L, C_out]; weight stored [C_out, C_in, k]."""

    def __init__(self, c_in, c_out, k, rng):
        super().__init__()
        if k < 1:
            raise ValueError("kernel size must be >= 1")
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.weight = self.add_param("weight", _uniform(rng, (c_out, c_in, k), c_in * k))
        self.bias = self.add_param("bias", np.zeros(c_out), decay=False)

    def forward(self, x):
        if x.ndim != 3 or x.shape[2] != self.c_in:
            raise DimensionError(f"Conv1d: expected [N, L, {self.c_in}], got {x.shape}")
        y, self._cache = _conv_forward(x, self.weight.value, self.bias.value)
        return y

    def backward(self, g):
        dx, dw, db = _conv_backward(g, self._cache)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class BatchNorm1d(Module):
    """Per-channel normalization over the batch and time axes of [N, L, C].

    Divides by ``std + eps`` (not ``sqrt(var + eps)``). Running statistics are
    exponential averages with weight ``decay`` on the old value.
    """

    def __init__(self, channels, decay=0.9, eps=1e-5):
        super().__init__()
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.channels, self.decay, self.eps = channels, decay, eps
        self.gamma = self.add_param("gamma", np.ones(channels), decay=False)
        self.beta = self.add_param("beta", np.zeros(channels), decay=False)
        self._buffers["running_mean"] = np.zeros(channels)
        self._buffers["running_std"] = np.ones(channels)

    @property
    def running_mean(self):
        return self._buffers["running_mean"]

    @property
    def running_std(self):
        return self._buffers["running_std"]

    def forward(self, x):
        if x.ndim != 3 or x.shape[2] != self.channels:
            raise DimensionError(f"BatchNorm1d: expected [N, L, {self.channels}], got {x.shape}")
        gamma, beta = self.gamma.value, self.beta.value
        if not self.training:
            s = self.running_std + self.eps
            xhat = (x - self.running_mean) / s
            self._cache = ("eval", xhat, s)
            return gamma * xhat + beta
        m = x.shape[0] * x.shape[1]
        if m < 2:
            raise DegenerateBatchError(f"BatchNorm1d needs N*L >= 2 per channel in train mode, got {m}")
        mu = x.mean(axis=(0, 1))
        xc = x - mu
        std = np.sqrt((xc * xc).mean(axis=(0, 1)))
        s = std + self.eps
        xhat = xc / s
        # in place, so references held elsewhere stay live
        self.running_mean[:] = self.decay * self.running_mean + (1.0 - self.decay) * mu
        self.running_std[:] = self.decay * self.running_std + (1.0 - self.decay) * std
        self._cache = ("train", xhat, s, xc, std, m)
        return gamma * xhat + beta

    def backward(self, g):
        mode, xhat, s = self._cache[:3]
        self.gamma.grad += (g * xhat).sum(axis=(0, 1))
        self.beta.grad += g.sum(axis=(0, 1))
        ghat = g * self.gamma.value
        if mode == "eval":
            return ghat / s
        _, _, _, xc, std, m = self._cache
        ds = -(ghat * xc).sum(axis=(0, 1)) / (s * s)
        # d std / d xc = xc / (m * std); zero-variance channels contribute nothing
        coef = np.divide(ds, m * std, out=np.zeros_like(std), where=std > 0)
        dxc = ghat / s + coef * xc
        return dxc - dxc.mean(axis=(0, 1))


class LeakyReLU(Module):
    def __init__(self, alpha=0.1):
        super().__init__()
        self.alpha = alpha

    def forward(self, x):
        self._mask = x >= 0
        return np.where(self._mask, x, self.alpha * x)

    def backward(self, g):
        return np.where(self._mask, g, self.alpha * g)


class Dense(Module):
    """``y = x @ W.T + b`` over the last axis."""

    def __init__(self, n_in, n_out, rng):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.weight = self.add_param("weight", _uniform(rng, (n_out, n_in), n_in))
        self.bias = self.add_param("bias", np.zeros(n_out), decay=False)

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise DimensionError(f"Dense: expected last axis {self.n_in}, got shape {x.shape}")
        self._x = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, g):
        x2 = self._x.reshape(-1, self.n_in)
        g2 = g.reshape(-1, self.n_out)
        self.weight.grad += g2.T @ x2
        self.bias.grad += g2.sum(axis=0)
        return g @ self.weight.value


class Dropout(Module):
    """Inverted dropout; identity in eval mode.

    Setting ``frozen = True`` reuses the last mask, which makes the layer
    deterministic for finite-difference checks.
    """

    def __init__(self, rate, rng):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng
        self.frozen = False
        self._mask = None

    def forward(self, x):
        if not self.training or self.rate == 0.0:
            self._mask = None
            return x
        if not (self.frozen and self._mask is not None and self._mask.shape == x.shape):
            keep = self.rng.random(x.shape) >= self.rate
            self._mask = keep / (1.0 - self.rate)
        return x * self._mask

    def backward(self, g):
        return g if self._mask is None else g * self._mask


class Conv1dBlock(Module):
    """Convolution, then batch norm, then LeakyReLU."""

    def __init__(self, c_in, c_out, k, rng, alpha=0.1, bn_decay=0.9, bn_eps=1e-5):
        super().__init__()
        self.conv = self.add_child("conv", Conv1d(c_in, c_out, k, rng))
        self.bn = self.add_child("bn", BatchNorm1d(c_out, bn_decay, bn_eps))
        self.act = self.add_child("act", LeakyReLU(alpha))

    def forward(self, x):
        return self.act(self.bn(self.conv(x)))

    def backward(self, g):
        return self.conv.backward(self.bn.backward(self.act.backward(g)))


class MultiHeadConv(Module):
    """Parallel Conv1D blocks with different kernel sizes, concatenated on the channel axis."""

    def __init__(self, c_in, rng, branch_channels=32, kernel_sizes: Sequence[int] = (5, 8, 11, 17), **block_kw):
        super().__init__()
        self.c_in = c_in
        self.kernel_sizes = tuple(kernel_sizes)
        self.branches = [
            self.add_child(f"branch{k}", Conv1dBlock(c_in, branch_channels, k, rng, **block_kw))
            for k in self.kernel_sizes
        ]
        self.c_out = branch_channels * len(self.branches)

    def forward(self, x):
        if x.ndim != 3 or x.shape[2] != self.c_in:
            raise DimensionError(f"MultiHeadConv: expected [N, L, {self.c_in}], got {x.shape}")
        return concat([b(x) for b in self.branches], axis=2)

    def backward(self, g):
        parts = concat_backward(g, [b.conv.c_out for b in self.branches], axis=2)
        return sum(b.backward(np.ascontiguousarray(gp)) for b, gp in zip(self.branches, parts))
