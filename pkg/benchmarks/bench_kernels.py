"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from coeffcast import _kernels_py

try:
    from coeffcast import _kernels as compiled
except ImportError:
    compiled = None


def cases(rng):
    a = rng.standard_normal((300, 184))
    b = rng.standard_normal((300, 184))
    z = rng.standard_normal((300 * 50, 64))
    book = rng.standard_normal((64, 64))
    x = rng.standard_normal((300, 184))
    w = np.full(4, 0.25)
    return {
        "discrete_frechet 300x300x184": lambda m: m.discrete_frechet(a, b),
        "nearest_code 15000x64 vs K=64": lambda m: m.nearest_code(z, book),
        "causal_smooth 300x184 window 4": lambda m: m.causal_smooth(x, w),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    impls = {"python": _kernels_py}
    if compiled is not None:
        impls["cython"] = compiled
    else:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':34s}" + "".join(f"{name:>12s}" for name in impls) + ("     speedup" if compiled else ""))
    for label, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for name, mod in impls.items():
            fn(mod)  # warm up
            times[name] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        row = f"{label:34s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times.values())
        if compiled is not None:
            row += f"{times['python'] / times['cython']:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
