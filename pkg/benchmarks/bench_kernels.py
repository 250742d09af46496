"""Benchmark the recurrent-layer kernels: numba JIT vs pure numpy.

Times a full forward+backward pass through one LSTM and one GRU layer at a
few training-shaped sizes. The first numba call in each configuration is a
warmup so JIT compilation does not pollute the timings.

Usage:
    python benchmarks/bench_kernels.py [--repeats 20]
"""

import argparse
import time

import numpy as np

import evpred.kernels.numpy_backend as numpy_backend

try:
    import evpred.kernels.numba_backend as numba_backend
except ImportError:
    numba_backend = None

SHAPES = [
    # (T, B, I, H); the B=1 row is the greedy-decode operating point,
    # the B=64 rows are training batches
    (8, 1, 64, 64),
    (6, 32, 32, 32),
    (8, 64, 64, 64),
    (16, 64, 128, 128),
    (24, 64, 300, 300),
]


def lstm_case(rng, T, B, I, H):
    return (rng.standard_normal((T, B, I)), np.zeros((B, H)), np.zeros((B, H)),
            rng.standard_normal((I, 4 * H)) * 0.1,
            rng.standard_normal((H, 4 * H)) * 0.1,
            np.zeros(4 * H))


def gru_case(rng, T, B, I, H):
    return (rng.standard_normal((T, B, I)), np.zeros((B, H)),
            rng.standard_normal((I, 3 * H)) * 0.1,
            rng.standard_normal((H, 3 * H)) * 0.1,
            np.zeros(3 * H))


def time_lstm(backend, case, dHs, repeats):
    X, h0, c0, Wx, Wh, b = case
    backend.lstm_layer_backward(X, h0, c0,
                                *backend.lstm_layer_forward(X, h0, c0, Wx, Wh, b),
                                Wx, Wh, dHs)  # warmup
    start = time.perf_counter()
    for _ in range(repeats):
        fwd = backend.lstm_layer_forward(X, h0, c0, Wx, Wh, b)
        backend.lstm_layer_backward(X, h0, c0, *fwd, Wx, Wh, dHs)
    return (time.perf_counter() - start) / repeats


def time_gru(backend, case, dHs, repeats):
    X, h0, Wx, Wh, b = case
    Hs, G = backend.gru_layer_forward(X, h0, Wx, Wh, b)
    backend.gru_layer_backward(X, h0, Hs, G, Wx, Wh, dHs)  # warmup
    start = time.perf_counter()
    for _ in range(repeats):
        Hs, G = backend.gru_layer_forward(X, h0, Wx, Wh, b)
        backend.gru_layer_backward(X, h0, Hs, G, Wx, Wh, dHs)
    return (time.perf_counter() - start) / repeats


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    header = f"{'cell':5} {'T':>3} {'B':>3} {'I':>4} {'H':>4} " \
             f"{'numpy ms':>9} {'numba ms':>9} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for T, B, I, H in SHAPES:
        dHs = rng.standard_normal((T, B, H))
        for cell, case_fn, time_fn in (("lstm", lstm_case, time_lstm),
                                       ("gru", gru_case, time_gru)):
            case = case_fn(rng, T, B, I, H)
            t_np = time_fn(numpy_backend, case, dHs, args.repeats)
            if numba_backend is not None:
                t_nb = time_fn(numba_backend, case, dHs, args.repeats)
                print(f"{cell:5} {T:>3} {B:>3} {I:>4} {H:>4} "
                      f"{t_np * 1e3:>9.2f} {t_nb * 1e3:>9.2f} "
                      f"{t_np / t_nb:>7.2f}x")
            else:
                print(f"{cell:5} {T:>3} {B:>3} {I:>4} {H:>4} "
                      f"{t_np * 1e3:>9.2f} {'n/a':>9} {'n/a':>8}")


if __name__ == "__main__":
    main()
