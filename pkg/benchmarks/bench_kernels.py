"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Every workload is run on both backends and the outputs are checked for
bit-identity before timings are reported.
"""
import argparse
import sys
import timeit

import numpy as np

from fedqot import kernels

WORKLOADS = {
    "uniform_fill(200k)": lambda k: k.uniform_fill(12345, 200_000),
    "permutation(100k)": lambda k: k.permutation(100_000, 99),
    "generate_domain(5k)": lambda k: k.generate_domain(7, 1, 5_000, 500_000, 0.5, 0.8),
}


def _flatten(result):
    if isinstance(result, np.ndarray):
        return [result.tobytes()]
    if isinstance(result, tuple):
        return [b for item in result for b in _flatten(item)]
    return [repr(result).encode()]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled backend not built; run `pip install -e . --no-build-isolation` first", file=sys.stderr)
        return 1
    c, p = backends["cython"], backends["python"]

    print(f"{'workload':<22}{'python (ms)':>14}{'cython (ms)':>14}{'speedup':>10}  identical")
    for name, fn in WORKLOADS.items():
        same = _flatten(fn(c)) == _flatten(fn(p))
        t_py = min(timeit.repeat(lambda: fn(p), number=1, repeat=args.repeat))
        t_cy = min(timeit.repeat(lambda: fn(c), number=1, repeat=args.repeat))
        print(f"{name:<22}{t_py * 1e3:>14.2f}{t_cy * 1e3:>14.3f}{t_py / t_cy:>9.0f}x  {same}")
        if not same:
            return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
