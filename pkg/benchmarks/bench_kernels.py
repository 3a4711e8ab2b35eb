"""Compare the compiled and NumPy conv1d kernels on backbone-sized problems.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Prints one line per (shape, backend) with the median wall time of a
forward and a backward call, and the speedup of the compiled kernels.
"""

import argparse
import statistics
import time

import numpy as np

from peft_muts import kernels

# (streams, C_in, C_out, T, K, stride, padding, groups)
CASES = [
    ("stem", 96, 1, 64, 30, 7, 2, 3, 1),
    ("block", 96, 64, 64, 15, 3, 1, 1, 1),
    ("down", 96, 64, 128, 15, 3, 2, 1, 1),
    ("align", 96, 64, 64, 15, 3, 1, 1, 64),
    ("wide", 16, 256, 512, 4, 3, 1, 1, 1),
]


def _median_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def run(repeat=20, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for name, S, cin, cout, T, K, stride, pad, groups in CASES:
        x = rng.standard_normal((S, cin, T))
        w = rng.standard_normal((cout, cin // groups, K))
        t_out = kernels.out_length(T, K, stride, pad)
        gy = rng.standard_normal((S, cout, t_out))
        per = {}
        for backend in kernels.available_backends():
            impl = kernels.get_backend(backend)
            fwd = _median_time(lambda: impl.conv1d_forward(x, w, stride, pad, groups), repeat)
            bwd = _median_time(lambda: impl.conv1d_backward(x, w, gy, stride, pad, groups, True, True), repeat)
            per[backend] = (fwd, bwd)
            rows.append((name, backend, fwd, bwd))
        if "cython" in per:
            py, cy = per["python"], per["cython"]
            rows.append((name, "speedup", py[0] / cy[0], py[1] / cy[1]))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    print(f"{'case':<6} {'backend':<8} {'forward':>12} {'backward':>12}")
    for name, backend, f, b in run(args.repeat):
        if backend == "speedup":
            print(f"{name:<6} {backend:<8} {f:>11.2f}x {b:>11.2f}x")
        else:
            print(f"{name:<6} {backend:<8} {f * 1e3:>10.3f}ms {b * 1e3:>10.3f}ms")


if __name__ == "__main__":
    main()
