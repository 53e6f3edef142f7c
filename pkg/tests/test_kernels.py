import os
import subprocess
import sys

import numpy as np
import pytest

from rtfn import kernels
from rtfn.tensor import make_rng


def _lstm_inputs(rng, T=5, G=2, N=3, H=4):
    xw = rng.standard_normal((G, T, N, 4 * H))
    wh = rng.standard_normal((G, 4 * H, H)) * 0.3
    h0, c0 = rng.standard_normal((G, N, H)) * 0.5, rng.standard_normal((G, N, H)) * 0.5
    return xw, wh, h0, c0


def test_lstm_kernels_numba_matches_numpy():
    py_f, nb_f = kernels.KERNEL_PAIRS["lstm_forward_seq"]
    py_b, nb_b = kernels.KERNEL_PAIRS["lstm_backward_seq"]
    xw, wh, h0, c0 = _lstm_inputs(make_rng(0))
    wh_t = np.ascontiguousarray(wh.transpose(0, 2, 1))
    a, b = py_f(xw, wh_t, h0, c0), nb_f(xw, wh_t, h0, c0)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=0, atol=1e-13)
    h_all, c_all, tc_all, acts = a
    dh = make_rng(1).standard_normal(h_all.shape)
    for u, v in zip(py_b(dh, acts, c_all, tc_all, c0, wh), nb_b(dh, acts, c_all, tc_all, c0, wh)):
        np.testing.assert_allclose(u, v, rtol=0, atol=1e-13)


def test_lstm_backward_against_finite_differences():
    rng = make_rng(2)
    xw, wh, h0, c0 = _lstm_inputs(rng, T=4, G=1, N=2, H=3)
    wh_t = np.ascontiguousarray(wh.transpose(0, 2, 1))
    probe = rng.standard_normal((1, 4, 2, 3))
    h_all, c_all, tc_all, acts = kernels.lstm_forward_seq_py(xw, wh_t, h0, c0)
    dz, dh0, dc0 = kernels.lstm_backward_seq_py(probe, acts, c_all, tc_all, c0, wh)
    eps = 1e-6
    for arr, grad in ((xw, dz), (h0, dh0), (c0, dc0)):
        flat, gflat = arr.reshape(-1), grad.reshape(-1)
        for i in range(0, flat.size, 5):
            o = flat[i]
            flat[i] = o + eps
            fp = (kernels.lstm_forward_seq_py(xw, wh_t, h0, c0)[0] * probe).sum()
            flat[i] = o - eps
            fm = (kernels.lstm_forward_seq_py(xw, wh_t, h0, c0)[0] * probe).sum()
            flat[i] = o
            assert abs((fp - fm) / (2 * eps) - gflat[i]) < 1e-7


@pytest.mark.parametrize("seed", range(5))
def test_assign_nearest_pairs_agree(seed):
    rng = make_rng(seed)
    pts, cents = rng.standard_normal((40, 3)), rng.standard_normal((4, 3))
    py, nb = kernels.KERNEL_PAIRS["assign_nearest"]
    (l1, d1), (l2, d2) = py(pts, cents), nb(pts, cents)
    np.testing.assert_array_equal(l1, l2)
    np.testing.assert_allclose(d1, d2, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_pair_agreement_pairs_agree(seed):
    rng = make_rng(seed)
    a, b = rng.integers(0, 3, 30), rng.integers(0, 4, 30)
    py, nb = kernels.KERNEL_PAIRS["pair_agreement"]
    assert py(a, b) == nb(a, b)


def test_env_flag_selects_numpy_fallback():
    code = (
        "from rtfn import kernels;"
        "print(kernels.assign_nearest is kernels.assign_nearest_py,"
        " kernels.pair_agreement is kernels.pair_agreement_py)"
    )
    env = dict(os.environ, RTFN_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["True", "True"]
    env["RTFN_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "False"]


def test_benchmark_script_runs():
    import runpy
    from pathlib import Path

    bench = runpy.run_path(str(Path(__file__).parents[1] / "benchmarks" / "bench_kernels.py"))
    rows = bench["main"](["--quick", "--repeat", "1"])
    assert [r[0] for r in rows] == list(kernels.KERNEL_PAIRS)
    assert all(r[1] > 0 and r[3] > 0 for r in rows)
