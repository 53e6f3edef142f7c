"""Time the numpy and numba versions of each hot kernel on training-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--quick]

Numba compilation happens in a warm-up call and is not timed.
"""
import argparse
import statistics
import time

import numpy as np

from rtfn import kernels
from rtfn.tensor import make_rng


def lstm_case(rng, G, T, N, H):
    xw = rng.standard_normal((G, T, N, 4 * H))
    wh = rng.standard_normal((G, 4 * H, H)) * (1.0 / np.sqrt(H))
    wh_t = np.ascontiguousarray(wh.transpose(0, 2, 1))
    h0 = np.zeros((G, N, H))
    c0 = np.zeros((G, N, H))
    fwd = kernels.lstm_forward_seq_py(xw, wh_t, h0, c0)
    dh = rng.standard_normal(fwd[0].shape)
    h_all, c_all, tc_all, acts = fwd
    return {
        "lstm_forward_seq": (xw, wh_t, h0, c0),
        "lstm_backward_seq": (dh, acts, c_all, tc_all, c0, wh),
    }


def cases(quick):
    rng = make_rng(0)
    # one LSTMaN level on a Coffee-sized batch: 3 LSTMs, 286 steps, 14 series
    G, T, N, H = (3, 64, 8, 32) if quick else (3, 286, 14, 128)
    out = lstm_case(rng, G, T, N, H)
    s, d, k = (200, 64, 4) if quick else (1000, 256, 10)
    out["assign_nearest"] = (rng.standard_normal((s, d)), rng.standard_normal((k, d)))
    s = 300 if quick else 2000
    out["pair_agreement"] = (rng.integers(0, 3, s), rng.integers(0, 3, s))
    return out


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times), statistics.median(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="small inputs, for smoke runs")
    args = ap.parse_args(argv)
    inputs = cases(args.quick)
    rows = []
    for name, (py_fn, nb_fn) in kernels.KERNEL_PAIRS.items():
        a = inputs[name]
        nb_fn(*a)  # compile
        py_min, py_med = best_of(py_fn, a, args.repeat)
        nb_min, nb_med = best_of(nb_fn, a, args.repeat)
        rows.append((name, py_min, py_med, nb_min, nb_med, py_min / nb_min))
    print(f"{'kernel':<20}{'numpy min':>12}{'numpy med':>12}{'numba min':>12}{'numba med':>12}{'speedup':>9}")
    for name, a, b, c, d, sp in rows:
        print(f"{name:<20}{a * 1e3:>10.2f}ms{b * 1e3:>10.2f}ms{c * 1e3:>10.2f}ms{d * 1e3:>10.2f}ms{sp:>8.2f}x")
    print(f"dispatch: assign_nearest={'numba' if kernels.assign_nearest is kernels.KERNEL_PAIRS['assign_nearest'][1] else 'numpy'}, "
          f"lstm=numpy (RTFN_NUMBA={'on' if kernels.ENABLE_NUMBA else 'off'})")
    return rows


if __name__ == "__main__":
    main()
