"""Compare the compiled trace kernels with the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--lengths 100 500 2000] [--repeats 5]
"""
import argparse
import timeit

import numpy as np

from demo2prog import _pykernels
from demo2prog.scenarios import reference_trace

try:
    from demo2prog import _ckernels
except ImportError:          # extension not built
    _ckernels = None


def traces(lengths, rng):
    out = {"patrol": np.array(reference_trace(), dtype=np.int64)}
    for n in lengths:
        out[f"random_{n}"] = rng.integers(0, 5, size=n).astype(np.int64)
        unit = rng.integers(0, 5, size=7)
        out[f"periodic_{n}"] = np.resize(unit, n).astype(np.int64)
    return out


def bench(fn, arg, repeats):
    number = 1
    while timeit.timeit(lambda: fn(arg), number=number) < 0.05:
        number *= 2
    return min(timeit.repeat(lambda: fn(arg), number=number, repeat=repeats)) / number


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--lengths", type=int, nargs="+", default=[100, 500, 2000])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    data = traces(args.lengths, np.random.default_rng(0))
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    else:
        print("compiled extension not available; timing the fallback only")
    print(f"{'kernel':<24}{'trace':<16}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for kernel in ("best_repeat", "longest_odd_palindrome"):
        for name, s in data.items():
            results = [getattr(mod, kernel)(s) for mod in backends.values()]
            assert all(r == results[0] for r in results), (kernel, name, results)
            times = [bench(getattr(mod, kernel), s, args.repeats) for mod in backends.values()]
            row = f"{kernel:<24}{name:<16}" + "".join(f"{t * 1e6:>10.1f}us" for t in times)
            if len(times) == 2:
                row += f"{times[0] / times[1]:>9.1f}x"
            print(row)


if __name__ == "__main__":
    main()
