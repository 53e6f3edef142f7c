"""Finite-difference checks for every differentiable component.

Each check builds a small instance, projects its output onto a fixed random
tensor to get a scalar loss, and compares the hand-written backward pass
with central differences on the input and on each parameter.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from rtfn import attention, layers, model, tensor, training

LAYER_TOL = 1e-4
COMPOSITE_TOL = 1e-3
EPS = 1e-5


@dataclass
class CheckResult:
    component: str
    max_rel_error: float
    tolerance: float
    seconds: float

    @property
    def passed(self):
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error <= self.tolerance)


def _away_from_zero(x, margin=1e-2):
    # keeps finite differences off the LeakyReLU kink
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin, x)


def _check_module(mod, x, rng, max_coords=40):
    """Grad-check ``mod`` on input ``x`` (input and all parameters)."""
    probe = None

    def fun():
        nonlocal probe
        mod.zero_grad()
        y = mod(x)
        if probe is None:
            probe = rng.standard_normal(y.shape)
        dx = mod.backward(probe)
        return float((y * probe).sum()), [dx] + [p.grad for p in params]

    params = mod.parameters()
    fun()
    return tensor.grad_check(fun, [x] + [p.value for p in params], eps=EPS, max_coords=max_coords, rng=rng)


def _check_function(forward, backward, inputs, rng):
    """Grad-check a functional op: ``backward(g, *inputs)`` returns one gradient per input."""
    probe = rng.standard_normal(np.shape(forward(*inputs)))

    def fun():
        y = forward(*inputs)
        return float((y * probe).sum()), list(backward(probe, *inputs))

    return tensor.grad_check(fun, inputs, eps=EPS, rng=rng)


def check_matmul(rng):
    return _check_function(tensor.matmul, tensor.matmul_backward,
                           [rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 5))], rng)


def check_softmax(rng):
    return _check_function(tensor.softmax_rows, lambda g, a: [tensor.softmax_rows_backward(g, tensor.softmax_rows(a))],
                           [rng.standard_normal((3, 5))], rng)


def check_concat_mean(rng):
    def fwd(a, b):
        return tensor.reduce_mean(tensor.concat([a, b], axis=2), axis=1)

    def bwd(g, a, b):
        full = tensor.reduce_mean_backward(g, (2, 4, 5), axis=1)
        return tensor.concat_backward(full, [2, 3], axis=2)

    return _check_function(fwd, bwd, [rng.standard_normal((2, 4, 2)), rng.standard_normal((2, 4, 3))], rng)


def check_conv1d(rng):
    return _check_module(layers.Conv1d(3, 4, 5, rng), rng.standard_normal((2, 9, 3)), rng)


def check_batchnorm(rng):
    return _check_module(layers.BatchNorm1d(3), rng.standard_normal((3, 5, 3)) * 2 + 1, rng)


def check_batchnorm_eval(rng):
    bn = layers.BatchNorm1d(3)
    bn.running_mean[:] = rng.standard_normal(3)
    bn.running_std[:] = rng.uniform(0.5, 2.0, 3)
    bn.eval()
    return _check_module(bn, rng.standard_normal((2, 4, 3)), rng)


def check_leaky_relu(rng):
    return _check_module(layers.LeakyReLU(0.1), _away_from_zero(rng.standard_normal((2, 6, 3))), rng)


def check_dense(rng):
    return _check_module(layers.Dense(5, 3, rng), rng.standard_normal((4, 5)), rng)


def check_conv_block(rng):
    return _check_module(layers.Conv1dBlock(2, 4, 3, rng), rng.standard_normal((3, 7, 2)), rng)


def check_multihead_conv(rng):
    mh = layers.MultiHeadConv(3, rng, branch_channels=2, kernel_sizes=(2, 3, 5))
    return _check_module(mh, rng.standard_normal((2, 8, 3)), rng)


def check_self_attention(rng):
    return _check_module(attention.SelfAttention(4, rng), rng.standard_normal((2, 5, 4)), rng)


def check_lstm_forward(rng):
    lstm = attention.Lstm(3, 4, rng)
    x = rng.standard_normal((2, 6, 3))
    h0 = rng.standard_normal((2, 4)) * 0.5
    c0 = rng.standard_normal((2, 4)) * 0.5
    probe = rng.standard_normal((2, 6, 4))
    params = lstm.parameters()

    def fun():
        lstm.zero_grad()
        y = lstm.forward(x, h0, c0)
        dx = lstm.backward(probe)
        return float((y * probe).sum()), [dx, lstm.dh0, lstm.dc0] + [p.grad for p in params]

    return tensor.grad_check(fun, [x, h0, c0] + [p.value for p in params], eps=EPS, max_coords=30, rng=rng)


def check_lstm_attention(rng):
    return _check_module(attention.LstmAttention(2, 3, rng), rng.standard_normal((2, 5, 2)), rng, max_coords=20)


def check_lstman(rng):
    return _check_module(attention.Lstman(2, 3, 2, rng), rng.standard_normal((2, 4, 2)), rng, max_coords=12)


def _tiny_config(**kw):
    base = dict(num_classes=3, input_channels=2, series_length=10, lstman_depth=2, hidden=5, channels=6,
                branch_channels=2, branch_kernels=(3, 4), stem_kernel=3, decoder_widths=(7, 6, 8), seed=3)
    base.update(kw)
    return model.RtfnConfig(**base)


def check_rtfn_end_to_end(rng):
    """Cross-entropy through the whole classifier, dropout mask held fixed."""
    cfg = _tiny_config()
    net = model.RtfnModel(cfg, rng)
    net.head_dropout.frozen = True
    x = rng.standard_normal((4, cfg.input_channels, cfg.series_length))
    y = np.array([0, 1, 2, 1])
    params = net.parameters()

    def fun():
        net.zero_grad()
        loss, g = training.softmax_cross_entropy(net(x), y)
        dx = net.backward(g)
        return loss, [dx] + [p.grad for p in params]

    fun()
    return tensor.grad_check(fun, [x] + [p.value for p in params], eps=EPS, max_coords=6, rng=rng)


def check_autoencoder_end_to_end(rng):
    """Reconstruction error through encoder features and the decoder."""
    cfg = _tiny_config(lstman_depth=1)
    enc = model.RtfnModel(cfg, rng)
    dec = model.Decoder(cfg, rng)
    x = rng.standard_normal((3, cfg.input_channels, cfg.series_length))
    params = enc.parameters() + dec.parameters()

    def fun():
        enc.zero_grad()
        dec.zero_grad()
        rec = dec(enc.features(x))
        g = training.mse_reconstruction_grad(x, rec)
        # x is also the reconstruction target, hence the direct -g term
        dx = enc.features_backward(dec.backward(g)) - g
        return training.mse_reconstruction(x, rec), [dx] + [p.grad for p in params]

    return tensor.grad_check(fun, [x] + [p.value for p in params], eps=EPS, max_coords=6, rng=rng)


# name -> (check, tolerance)
COMPONENTS = {
    "matmul": (check_matmul, LAYER_TOL),
    "softmax": (check_softmax, LAYER_TOL),
    "concat_mean": (check_concat_mean, LAYER_TOL),
    "conv1d": (check_conv1d, LAYER_TOL),
    "batchnorm": (check_batchnorm, LAYER_TOL),
    "batchnorm_eval": (check_batchnorm_eval, LAYER_TOL),
    "leaky_relu": (check_leaky_relu, LAYER_TOL),
    "dense": (check_dense, LAYER_TOL),
    "conv_block": (check_conv_block, LAYER_TOL),
    "multihead_conv": (check_multihead_conv, LAYER_TOL),
    "self_attention": (check_self_attention, LAYER_TOL),
    "lstm_forward": (check_lstm_forward, LAYER_TOL),
    "lstm_attention": (check_lstm_attention, LAYER_TOL),
    "lstman": (check_lstman, LAYER_TOL),
    "rtfn_end_to_end": (check_rtfn_end_to_end, COMPOSITE_TOL),
    "autoencoder_end_to_end": (check_autoencoder_end_to_end, COMPOSITE_TOL),
}


def run_suite(names=None, seed=0) -> list[CheckResult]:
    results = []
    for name in names or COMPONENTS:
        fn, tol = COMPONENTS[name]
        t0 = time.perf_counter()
        try:
            err = fn(tensor.make_rng(seed))
        except tensor.NonFiniteError:
            err = float("inf")
        results.append(CheckResult(name, float(err), tol, time.perf_counter() - t0))
    return results
