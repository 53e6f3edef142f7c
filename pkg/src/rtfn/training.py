"""Losses, RMSProp with momentum, the step-decay schedule and the training loops."""
from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from rtfn.layers import BatchNorm1d
from rtfn.tensor import DimensionError, NonFiniteError, Parameter, make_rng, softmax_rows


class NumericDivergence(NonFiniteError):
    """The training loss became NaN or infinite."""


@dataclass
class TrainConfig:
    lr0: float = 0.01
    lr_decay_rate: float = 0.1
    lr_floor: float = 1e-4
    decay_period_epochs: int = 50
    epochs: int = 500
    batch_size: int = 16
    momentum: float = 0.9
    rms_rho: float = 0.9
    rms_eps: float = 1e-8
    rms_init: float = 1.0
    l2_coeff: float = 1e-4
    seed: int = 0
    eval_every: int = 1
    keep_best: bool = False  # end on the weights of the lowest-training-loss epoch

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0.0 < self.lr_floor <= self.lr0:
            raise ValueError(f"need 0 < lr_floor <= lr0, got lr_floor={self.lr_floor}, lr0={self.lr0}")
        if not 0.0 <= self.lr_decay_rate < 1.0:
            raise ValueError(f"lr_decay_rate must be in [0, 1), got {self.lr_decay_rate}")
        for name in ("decay_period_epochs", "epochs", "batch_size", "eval_every"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.rms_init < 0:
            raise ValueError("rms_init must be >= 0")
        if self.l2_coeff < 0:
            raise ValueError("l2_coeff must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class LossRecord:
    epoch: int
    train_loss: float
    eval_metric: float
    lr_used: float
    wall_ms: float


LOSS_CSV_HEADER = ("epoch", "train_loss", "eval_metric", "lr", "wall_ms")


def write_loss_csv(path, records: Iterable[LossRecord]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOSS_CSV_HEADER)
        for r in records:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.eval_metric), repr(r.lr_used), f"{r.wall_ms:.3f}"])


# ---- losses ----

def _check_onehot(labels):
    ok = np.all((labels == 0) | (labels == 1), axis=1) & (labels.sum(axis=1) == 1)
    if not np.all(ok):
        raise ValueError(f"malformed one-hot label rows: {np.flatnonzero(~ok).tolist()[:5]}")


def cross_entropy(probs, labels):
    """Mean negative log-probability of the true class; log arguments clamped at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape or probs.ndim != 2:
        raise DimensionError(f"cross_entropy: probs {probs.shape} vs labels {labels.shape}")
    _check_onehot(labels)
    picked = (probs * labels).sum(axis=1)
    return float(-np.mean(np.log(np.maximum(picked, 1e-12))))


def onehot(y, k):
    y = np.asarray(y)
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    out = np.zeros((y.shape[0], k))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def softmax_cross_entropy(logits, y):
    """Loss and gradient w.r.t. the logits for integer labels ``y``."""
    probs = softmax_rows(logits)
    n = logits.shape[0]
    picked = probs[np.arange(n), y]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-12))))
    g = probs.copy()
    g[np.arange(n), y] -= 1.0
    return loss, g / n


def mse_reconstruction(x, x_rec):
    x = np.asarray(x, dtype=np.float64)
    x_rec = np.asarray(x_rec, dtype=np.float64)
    if x.shape != x_rec.shape:
        raise DimensionError(f"mse_reconstruction: {x.shape} vs {x_rec.shape}")
    d = x_rec - x
    return float(np.mean(d * d))


def mse_reconstruction_grad(x, x_rec):
    return 2.0 * (x_rec - x) / x.size


# ---- optimization ----

def lr_schedule(j: int, cfg: TrainConfig) -> float:
    """Step decay ``lr0 * (1 - d)**j``, held at ``lr_floor`` once it falls below."""
    if j < 0:
        raise ValueError("decay-period index must be >= 0")
    return max(cfg.lr0 * (1.0 - cfg.lr_decay_rate) ** j, cfg.lr_floor)


def lr_for_epoch(epoch: int, cfg: TrainConfig) -> float:
    return lr_schedule(epoch // cfg.decay_period_epochs, cfg)


def add_l2(params: Sequence[Parameter], coeff: float):
    if coeff:
        for p in params:
            if p.decay:
                p.grad += coeff * p.value


def init_optimizer_state(params: Sequence[Parameter], cfg: TrainConfig):
    """Reset momentum to zero and the squared-gradient average to ``cfg.rms_init``."""
    for p in params:
        p.rms_acc.fill(cfg.rms_init)
        p.momentum_buf.fill(0.0)


def rmsprop_step(params: Sequence[Parameter], lr: float, cfg: TrainConfig):
    """RMSProp with momentum, from the accumulators' current state."""
    rho, mu, eps = cfg.rms_rho, cfg.momentum, cfg.rms_eps
    for p in params:
        g = p.grad
        p.rms_acc *= rho
        p.rms_acc += (1.0 - rho) * g * g
        p.momentum_buf *= mu
        p.momentum_buf += lr * g / np.sqrt(p.rms_acc + eps)
        p.value -= p.momentum_buf


def sgd_step(params: Sequence[Parameter], lr: float):
    """Plain gradient descent; kept for tests."""
    for p in params:
        p.value -= lr * p.grad


# ---- loops ----

def _batches(n, batch_size, rng):
    """Shuffled index batches of near-equal size (no tiny trailing batch)."""
    order = rng.permutation(n)
    nb = -(-n // min(batch_size, n))
    return np.array_split(order, nb)


def _check_finite(loss, epoch):
    if not np.isfinite(loss):
        raise NumericDivergence(f"non-finite training loss at epoch {epoch}")


def _batchnorms(module):
    for child in module._children.values():
        if isinstance(child, BatchNorm1d):
            yield child
        yield from _batchnorms(child)


def recalibrate_batchnorm(model, x, chunk=128):
    """Replace every BN layer's running statistics by their average over ``x`` under the current weights.

    Done before evaluation: the exponential averages trail the weights, and
    early in training the lag is large enough to wreck eval-mode outputs.
    Chunks are combined by a cumulative mean.
    """
    bns = list(_batchnorms(model))
    if not bns:
        return
    saved = [b.decay for b in bns]
    model.train()
    try:
        for i, start in enumerate(range(0, len(x), chunk)):
            for b in bns:
                b.decay = i / (i + 1.0)
            model.features(x[start : start + chunk])
    finally:
        for b, d in zip(bns, saved):
            b.decay = d
    model.eval()


def evaluate_accuracy(model, x, y, batch_size=64):
    model.eval()
    pred = np.concatenate([model.predict(x[i : i + batch_size]) for i in range(0, len(x), batch_size)])
    return float(np.mean(pred == np.asarray(y)))


def train_supervised(model, dataset, cfg: TrainConfig, eval_set=None, on_epoch: Callable | None = None,
                     schedule: Callable[[int], float] | None = None):
    """Fit ``model`` on a labeled dataset; returns (model, records).

    ``eval_metric`` is accuracy on ``eval_set`` when given (train accuracy
    otherwise), measured in eval mode every ``eval_every`` epochs and NaN
    on the epochs in between. ``schedule(epoch)`` replaces the configured
    learning-rate schedule when given. With ``cfg.keep_best`` the weights
    from the epoch with the lowest mean training loss are restored at the
    end (BN statistics recomputed for them).
    """
    x, y = np.asarray(dataset.x, dtype=np.float64), dataset.y
    if x.shape[0] == 0:
        raise ValueError("empty dataset")
    if y is None:
        raise ValueError("train_supervised needs labels")
    y = np.asarray(y, dtype=np.int64)
    k = model.cfg.num_classes
    if y.min() < 0 or y.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    ex, ey = (x, y) if eval_set is None else (np.asarray(eval_set.x, dtype=np.float64), eval_set.y)
    rng = make_rng(cfg.seed)
    params = model.parameters()
    init_optimizer_state(params, cfg)
    records = []
    best_loss, best = np.inf, None
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = schedule(epoch) if schedule is not None else lr_for_epoch(epoch, cfg)
        model.train()
        total = 0.0
        for idx in _batches(len(x), cfg.batch_size, rng):
            model.zero_grad()
            loss, g = softmax_cross_entropy(model(x[idx]), y[idx])
            _check_finite(loss, epoch)
            model.backward(g)
            add_l2(params, cfg.l2_coeff)
            rmsprop_step(params, lr, cfg)
            total += loss * len(idx)
        if cfg.keep_best and total / len(x) < best_loss:
            best_loss, best = total / len(x), [p.value.copy() for p in params]
        metric = float("nan")
        if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
            recalibrate_batchnorm(model, x)
            metric = evaluate_accuracy(model, ex, ey)
        rec = LossRecord(epoch, total / len(x), metric, lr, (time.perf_counter() - t0) * 1e3)
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    if best is not None:
        for p, v in zip(params, best):
            p.value[...] = v
        recalibrate_batchnorm(model, x)
    model.eval()
    return model, records


def encode(model, x, batch_size=64):
    model.eval()
    return np.concatenate([model.features(x[i : i + batch_size]) for i in range(0, len(x), batch_size)])


def train_autoencoder(model, decoder, dataset, cfg: TrainConfig, on_epoch: Callable | None = None,
                      metric: Callable | None = None, schedule: Callable[[int], float] | None = None):
    """Fit encoder and decoder on reconstruction error alone; returns (model, records).

    ``metric(model)``, if given, fills ``eval_metric`` every ``eval_every`` epochs.
    """
    x = np.asarray(dataset.x, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("empty dataset")
    rng = make_rng(cfg.seed)
    params = model.parameters() + decoder.parameters()
    init_optimizer_state(params, cfg)
    records = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = schedule(epoch) if schedule is not None else lr_for_epoch(epoch, cfg)
        model.train()
        decoder.train()
        total = 0.0
        for idx in _batches(len(x), cfg.batch_size, rng):
            model.zero_grad()
            decoder.zero_grad()
            xb = x[idx]
            rec = decoder(model.features(xb))
            loss = mse_reconstruction(xb, rec)
            _check_finite(loss, epoch)
            model.features_backward(decoder.backward(mse_reconstruction_grad(xb, rec)))
            add_l2(params, cfg.l2_coeff)
            rmsprop_step(params, lr, cfg)
            total += loss * len(idx)
        value = float("nan")
        if metric is not None and ((epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1):
            recalibrate_batchnorm(model, x)
            value = float(metric(model))
        r = LossRecord(epoch, total / len(x), value, lr, (time.perf_counter() - t0) * 1e3)
        records.append(r)
        if on_epoch is not None:
            on_epoch(r)
    recalibrate_batchnorm(model, x)
    decoder.eval()
    return model, records
