"""Time the jitted kernels against their pure numpy originals.

    python benchmarks/bench_kernels.py [--steps N] [--repeat R]

The first jitted call (compilation, or a cache load) is excluded.
"""

import argparse
import time

import numpy as np

from conslaw import _kernels
from conslaw.dynamics import make_synthetic_dataset, step_parameters
from conslaw.model import Architecture


def best_of(fn, args, repeat):
    fn(*args)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def flow_args(arch, steps, delta=1e-3, mu=1.0, nu=1.0):
    data = make_synthetic_dataset(arch, 64, 0)
    theta = np.random.default_rng(0).standard_normal(arch.D)
    n, m, r = arch.nmr
    alpha, beta = step_parameters(mu, nu, delta)
    return (theta, theta.copy(), data.X, np.ascontiguousarray(data.X.T), data.Y, n, m, r,
            arch.kind == "relu2", arch.bias, arch.out_bias, _kernels.EUCLIDEAN,
            mu, nu, alpha, beta, delta, steps)


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    print(f"backend: {_kernels.BACKEND}")
    cases = [
        ("flow linear (2,2,2)", _kernels.run_two_layer, _kernels.run_two_layer_py,
         flow_args(Architecture.linear_nmr(2, 2, 2), args.steps)),
        ("flow relu2 (4,8,16)+bias", _kernels.run_two_layer, _kernels.run_two_layer_py,
         flow_args(Architecture("relu2", (4, 8, 16), bias=True), args.steps)),
        ("rk4 free flow dim 4", _kernels.rk4_damped, _kernels.rk4_damped_py,
         (np.ones(4), np.ones(4), 1.0, 2.0, args.steps)),
    ]
    for name, fast, slow, a in cases:
        tf, ts = best_of(fast, a, args.repeat), best_of(slow, a, args.repeat)
        print(f"{name:28s} jit {tf * 1e3:9.2f} ms   numpy {ts * 1e3:9.2f} ms   x{ts / tf:6.1f}")


if __name__ == "__main__":
    main()
