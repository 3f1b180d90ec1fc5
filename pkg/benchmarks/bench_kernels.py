"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints the median wall time per kernel and backend, the speedup, and the
largest difference between the two backends' outputs.
"""

import argparse
import statistics
import time

import numpy as np

from mfteams import kernels


def _cases():
    rng = np.random.default_rng(0)
    S, N = 2000, 200
    u = rng.normal(size=(S, N, 2))
    x = rng.normal(size=(S, N, 2))
    xs = rng.normal(size=(S, 2))
    R = np.array([[2.0, 0.3], [0.3, 1.5]])
    Q = np.array([[1.0, 0.1], [0.1, 0.8]])
    D = np.array([[0.4, 0.0], [0.0, 0.3]])
    streams = np.arange(4096, dtype=np.uint64)
    return {
        "philox_uniforms 4096x512": lambda: kernels.philox_uniforms(7, streams, 512),
        "state_coupled_costs 2000x200x2": lambda: kernels.state_coupled_costs(u, x, R, Q),
        "control_coupled_costs 2000x200x2": lambda: kernels.control_coupled_costs(u, xs, R, D, Q, 1.0),
    }


def _time(fn, repeat):
    out = fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return statistics.median(times), out


def main(argv=None):
    p = argparse.ArgumentParser()
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    backends = kernels.available_backends()
    previous = kernels.backend_name()
    rows = []
    try:
        for name, fn in _cases().items():
            res = {}
            for b in backends:
                kernels.use_backend(b)
                res[b] = _time(fn, args.repeat)
            rows.append((name, res))
    finally:
        kernels.use_backend(previous)
    print(f"{'kernel':36s} " + " ".join(f"{b:>12s}" for b in backends) + "     speedup  max |diff|")
    for name, res in rows:
        times = " ".join(f"{res[b][0] * 1e3:10.2f}ms" for b in backends)
        if len(backends) == 2:
            speed = res["python"][0] / res["compiled"][0]
            diff = float(np.max(np.abs(res["python"][1] - res["compiled"][1])))
            print(f"{name:36s} {times} {speed:10.1f}x  {diff:.2e}")
        else:
            print(f"{name:36s} {times}   (compiled kernels not built)")


if __name__ == "__main__":
    main()
