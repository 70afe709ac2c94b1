"""Time the LSTM recurrence kernels: compiled extension vs numpy fallback.

    python3 benchmarks/bench_lstm.py [--repeat 5]

Prints one line per shape with the median forward+backward time of each
backend, the speed-up, and the largest difference between their outputs.
"""
import argparse
import statistics
import time

import numpy as np

from anchorasr.numerics import backend

SHAPES = [
    # (batch, steps, hidden)
    (1, 16, 8),
    (16, 16, 32),
    (16, 64, 32),
    (64, 32, 64),
]


def run_once(kernels, xw, U, dhs):
    hs, cache = kernels.recurrence_forward(xw, U)
    grads = kernels.recurrence_backward(dhs, U, hs, cache)
    return hs, grads


def median_time(kernels, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        run_once(kernels, *args)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def max_diff(a, b):
    if isinstance(a, (tuple, list)):
        return max(max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if backend.compiled_kernels is None:
        raise SystemExit("compiled kernels not built; run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(0)
    print(f"{'B':>4} {'T':>4} {'H':>4} {'python ms':>10} {'compiled ms':>12} {'speed-up':>9} {'max |diff|':>11}")
    for B, steps, H in SHAPES:
        xw = rng.normal(size=(B, steps, 4 * H))
        U = rng.normal(scale=0.3, size=(H, 4 * H))
        dhs = rng.normal(size=(B, steps, H))
        data = (xw, U, dhs)
        py = median_time(backend.python_kernels, data, args.repeat)
        cc = median_time(backend.compiled_kernels, data, args.repeat)
        diff = max_diff(run_once(backend.python_kernels, *data), run_once(backend.compiled_kernels, *data))
        print(f"{B:>4} {steps:>4} {H:>4} {py * 1e3:>10.2f} {cc * 1e3:>12.2f} {py / cc:>8.1f}x {diff:>11.1e}")


if __name__ == "__main__":
    main()
