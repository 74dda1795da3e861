"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from darl import _pykernels

try:
    from darl import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    values = 100 * np.cumprod(1 + rng.normal(0, 0.01, 2520))
    series = rng.normal(size=(2520, 30))
    rewards, vals = rng.normal(size=512), rng.normal(size=512)
    dones = (rng.uniform(size=512) < 0.02).astype(float)
    vec = rng.normal(size=30)
    return {
        "max_drawdown(2520)": lambda k: k.max_drawdown(values),
        "ewma(2520x30)": lambda k: k.ewma(series, 2 / 13),
        "wilder_smooth(2520x30)": lambda k: k.wilder_smooth(np.abs(series), 14, 1),
        "gae(512)": lambda k: k.gae(rewards, vals, dones, 0.0, 0.99, 0.95),
        "simplex_projection(30)": lambda k: k.simplex_projection(vec),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    backends = [("python", _pykernels)] + ([("cython", _kernels)] if _kernels else [])
    if _kernels is None:
        print("compiled kernels not built; timing the numpy fallback only")
    print(f"{'kernel':26s}" + "".join(f"{name:>14s}" for name, _ in backends) + ("     speedup" if _kernels else ""))
    for label, fn in cases(np.random.default_rng(0)).items():
        times = []
        for _, mod in backends:
            timer = timeit.Timer(lambda: fn(mod))
            n, _ = timer.autorange()
            times.append(min(timer.repeat(args.repeat, n)) / n)
        row = f"{label:26s}" + "".join(f"{t * 1e6:12.1f}us" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
