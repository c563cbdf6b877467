"""Wall-clock comparison of the compiled and numpy Euler-Maruyama kernels.

    python3 benchmarks/bench_backends.py [--t-end 0.2] [--repeat 3]
"""
import argparse
import time

import numpy as np

from stochdc import engine, load_scenario, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--t-end", type=float, default=0.2)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    sc = load_scenario("paper-sec5").with_settings(t_end=args.t_end)
    steps = int(round(sc.settings.t_end / sc.settings.dt))
    backends = ["python"] + (["compiled"] if engine.BACKEND == "compiled" else [])
    results = {}
    for name in backends:
        best = min(_timed(sc, name) for _ in range(args.repeat))
        results[name] = best
        print(f"{name:9s} {best:8.3f} s  {steps / best:12.0f} steps/s")
    if len(results) == 2:
        a, b = simulate(sc, backend="python"), simulate(sc, backend="compiled")
        print(f"speedup   {results['python'] / results['compiled']:8.1f}x  "
              f"identical records: {np.array_equal(a.data, b.data)}")


def _timed(sc, backend):
    start = time.perf_counter()
    simulate(sc, backend=backend)
    return time.perf_counter() - start


if __name__ == "__main__":
    main()
