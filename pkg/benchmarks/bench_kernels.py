"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py            # default sizes
    python benchmarks/bench_kernels.py --quick    # small sizes, a few seconds

Prints one line per (kernel, backend) with the best-of-repeats time and
the speed-up of the compiled backend. The S_N line at P = 2^20 reports
milliseconds per window length N, to compare against the 100 ms budget.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from ergokit import kernels
from ergokit.averaging import sliding_average
from ergokit.grid import GridFunction, set_memory_cap


def best_of(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def cases(quick: bool, rng: np.random.Generator):
    P_big = 1 << (14 if quick else 20)
    a = rng.uniform(-1, 1, (1, P_big))
    yield "window_sums", f"P={P_big}, N=P/3", lambda: kernels.window_sums(a, P_big // 3)

    P = 61 if quick else 211
    fib = rng.uniform(-1, 1, (P * P, P))
    sig = rng.integers(0, P, P * P)
    yield "diag_project", f"P={P}, fibres={P * P}, N={P // 2}", lambda: kernels.diag_project(fib, sig, P // 2)

    P3 = 31 if quick else 61
    stack = rng.uniform(-1, 1, (2, P3, P3))
    yield "multiple_average", f"l=2, P={P3}, N={P3 - 1}", lambda: kernels.multiple_average(stack, P3 - 1)

    Ps = 4001 if quick else 20011
    g, h = rng.uniform(-1, 1, Ps), rng.uniform(-1, 1, Ps)
    shifts = np.arange(-(Ps // 4), Ps // 4)
    yield "shift_correlations", f"P={Ps}, shifts={shifts.size}", lambda: kernels.shift_correlations(g, h, shifts)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    set_memory_cap(1 << 28)
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}")

    for name, desc, fn in cases(args.quick, np.random.default_rng(args.seed)):
        times = {}
        for b in backends:
            with kernels.use_backend(b):
                fn()  # warm-up
                times[b] = best_of(fn, args.repeat)
        line = "  ".join(f"{b}={t * 1e3:9.2f} ms" for b, t in times.items())
        speed = f"  speed-up x{times['python'] / times['cython']:.1f}" if len(times) == 2 else ""
        print(f"{name:20s} {desc:32s} {line}{speed}")

    P = 1 << (14 if args.quick else 20)
    g = GridFunction(np.random.default_rng(args.seed).uniform(-1, 1, P))
    Ns = [1, 1000, P // 3, P - 1, 5 * P + 7]
    for b in backends:
        with kernels.use_backend(b):
            per_N = [best_of(lambda N=N: sliding_average(g, N), args.repeat) for N in Ns]
        worst = max(per_N) * 1e3
        verdict = "within" if worst < 100 else "over"
        print(f"S_N per N at P={P} [{b}]: worst {worst:.1f} ms over N={Ns} ({verdict} 100 ms)")


if __name__ == "__main__":
    main()
