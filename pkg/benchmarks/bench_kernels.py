"""Time the numba and numpy kernels side by side.

    python benchmarks/bench_kernels.py [--n 1000000] [--repeat 5]

The first numba call (JIT compile or cache load) is excluded.
"""

import argparse
import time

import numpy as np

from fedsim import _accel


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=1_000_000, help="elements per call")
    parser.add_argument("--peers", type=int, default=8, help="pairwise masks per client")
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    keys = np.arange(1, args.peers + 1, dtype=np.uint64) * np.uint64(0x9E3779B97F4A7C15)
    signs = np.where(np.arange(args.peers) % 2 == 0, 1, -1).astype(np.int8)
    backends = _accel.available_backends()
    print(f"n={args.n} peers={args.peers} active backend: {_accel.BACKEND}")
    print(f"{'kernel':<10}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}")
    for label, idx, call in [
        ("splitmix", 0, lambda f: f(12345, 0, args.n)),
        ("normal", 1, lambda f: f(12345, 0, args.n // 2)),
        ("mask", 2, lambda f: f(keys, signs, args.n)),
    ]:
        row = {}
        for name, fns in backends.items():
            fn = fns[idx]
            call(fn)  # warm up
            row[name] = best_of(lambda: call(fn), args.repeat)
        speed = row["numpy"] / row["numba"] if "numba" in row else float("nan")
        print(f"{label:<10}" + "".join(f"{row[n] * 1e3:>10.2f}ms" for n in backends) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
