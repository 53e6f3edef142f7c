"""Dense float64 numerics with explicit backward rules.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Every
differentiable op here has a matching ``*_backward`` that maps the upstream
gradient to gradients on the op's inputs; layers compose these by hand.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """Raised when a computation that must stay finite does not."""


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator; the stream depends only on ``seed``."""
    return np.random.Generator(np.random.Philox(int(seed)))


def spawn(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Independent child generators, deterministic given the parent's state."""
    return [make_rng(s) for s in rng.integers(0, 2**63 - 1, size=n, dtype=np.int64)]


@dataclass(eq=False)
class Parameter:
    """A trainable array with its gradient and optimizer state."""

    name: str
    value: np.ndarray
    decay: bool = True
    grad: np.ndarray = field(init=False)
    rms_acc: np.ndarray = field(init=False)
    momentum_buf: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.rms_acc = np.zeros_like(self.value)
        self.momentum_buf = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def zero_grad(self):
        self.grad.fill(0.0)


def matmul(a, b):
    """Matrix product over the last two axes (leading axes batch)."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return np.matmul(a, b)


def matmul_backward(g, a, b):
    """Gradients of ``matmul(a, b)``: ``g @ b.T`` and ``a.T @ g``."""
    da = np.matmul(g, np.swapaxes(b, -1, -2))
    db = np.matmul(np.swapaxes(a, -1, -2), g)
    # broadcast batch axes of b (e.g. a shared weight) are summed out
    while db.ndim > b.ndim:
        db = db.sum(axis=0)
    return da, db


def softmax_rows(a):
    """Softmax along the last axis, stabilized by subtracting the row max."""
    z = a - a.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows_backward(g, y):
    """Gradient through ``y = softmax_rows(a)``."""
    return y * (g - (g * y).sum(axis=-1, keepdims=True))


def concat(parts: Sequence[np.ndarray], axis: int):
    if not parts:
        raise DimensionError("concat: no parts given")
    ndim = parts[0].ndim
    if not -ndim <= axis < ndim:
        raise DimensionError(f"concat: axis {axis} out of range for {ndim}-d parts")
    ax = axis % ndim
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != ndim or any(p.shape[i] != ref[i] for i in range(ndim) if i != ax):
            raise DimensionError(f"concat: incompatible shapes {ref} and {p.shape} on axis {axis}")
    return np.concatenate(parts, axis=ax)


def concat_backward(g, sizes: Sequence[int], axis: int):
    """Split ``g`` back into pieces of the given sizes along ``axis``."""
    return np.split(g, np.cumsum(sizes)[:-1], axis=axis)


def reduce_mean(a, axis: int):
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"reduce_mean: axis {axis} out of range for shape {a.shape}")
    if a.shape[axis] == 0:
        raise DimensionError("reduce_mean: zero-length axis")
    return a.mean(axis=axis)


def reduce_mean_backward(g, shape, axis: int):
    n = shape[axis]
    return np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy()


def grad_check(
    fun: Callable[[], tuple[float, Sequence[np.ndarray]]],
    inputs: Sequence[np.ndarray],
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients against central finite differences.

    ``fun()`` must read ``inputs`` by reference and return ``(loss, grads)``
    with ``grads`` aligned to ``inputs``. Inputs are perturbed in place and
    restored. If ``max_coords`` is set, only that many randomly chosen
    coordinates per input are probed.

    Returns the maximum of ``|a - n| / max(1, |a| + |n|)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    _, grads = fun()
    grads = [np.array(g, dtype=np.float64, copy=True) for g in grads]
    if len(grads) != len(inputs):
        raise ValueError("fun returned a different number of gradients than inputs")
    rng = rng if rng is not None else make_rng(0)
    worst = 0.0
    for x, g in zip(inputs, grads):
        if g.shape != x.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match input {x.shape}")
        flat = x.reshape(-1)  # view: inputs must be contiguous
        if not np.shares_memory(flat, x):
            raise ValueError("grad_check inputs must be contiguous arrays")
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        gflat = g.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(fun()[0])
            flat[i] = orig - eps
            fm = float(fun()[0])
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"non-finite loss at perturbed coordinate {i}")
            num = (fp - fm) / (2.0 * eps)
            ana = gflat[i]
            err = abs(ana - num) / max(1.0, abs(ana) + abs(num))
            worst = max(worst, err)
    return worst
