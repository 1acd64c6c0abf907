"""Compare the numba and numpy metric kernels.

Default workload is one full test-set evaluation: 7061 segments x 5 output
leads x 1024 samples, plus the Einthoven check on a 10 s, 500 Hz record.

    python3 benchmarks/bench_kernels.py [--rows 35305] [--samples 1024] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from ecgrecon import _kernels as K


def bench(fn, repeat):
    fn()  # warm-up; also triggers numba compilation
    times = timeit.repeat(fn, number=1, repeat=repeat)
    return min(times), float(np.median(times))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=7061 * 5)
    p.add_argument("--samples", type=int, default=1024)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    rng = np.random.default_rng(args.seed)
    x = rng.normal(size=(args.rows, args.samples))
    y = 0.7 * x + rng.normal(size=x.shape)
    lead_i, lead_iii = rng.normal(size=(2, 5000))
    lead_ii = lead_i + lead_iii

    cases = {
        "pcc_rows": lambda nb: K.pcc_rows(x, y, use_numba=nb),
        "mse_rows": lambda nb: K.mse_rows(x, y, use_numba=nb),
        "einthoven_residual": lambda nb: K.einthoven_residual(lead_i, lead_ii, lead_iii, use_numba=nb),
    }
    print(f"numba available: {K.NUMBA_AVAILABLE}; rows={args.rows} samples={args.samples}")
    print(f"{'kernel':20s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, call in cases.items():
        nb_best, _ = bench(lambda: call(True), args.repeat)
        np_best, _ = bench(lambda: call(False), args.repeat)
        diff = np.max(np.abs(np.asarray(call(True)) - np.asarray(call(False))))
        print(f"{name:20s} {nb_best * 1e3:10.2f} {np_best * 1e3:10.2f} "
              f"{np_best / nb_best:7.1f}x {diff:11.1e}")


if __name__ == "__main__":
    main()
