"""Time the numba and numpy flavour of every kernel on representative inputs.

    python3 benchmarks/bench_kernels.py [--repeat N] [--kernel NAME ...]

Numba compile time is excluded (one warm-up call per kernel). Run with
QEKIT_DISABLE_JIT unset; with it set, both columns time plain Python/numpy.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from qekit import kernels
from qekit._jit import USE_JIT


def _inputs(rng: np.random.Generator) -> dict[str, tuple]:
    logits = rng.normal(size=(4000, 3))
    return {
        "sparsemax_threshold": (rng.normal(size=5),),
        "average_ranks": (rng.integers(0, 200, size=2000).astype(np.float64),),
        "kendall_counts": (rng.normal(size=2000), rng.integers(0, 50, size=2000).astype(np.float64)),
        "confusion": (rng.integers(0, 2, size=100_000), rng.integers(0, 2, size=100_000)),
        "span_credit": (
            rng.integers(0, 3, size=100_000).astype(np.int8),
            rng.integers(0, 3, size=100_000).astype(np.int8),
        ),
        "softmax_xent": (logits, rng.integers(0, 3, size=4000), np.full(4000, 1e-3)),
    }


def bench(name: str, args: tuple, repeat: int) -> tuple[float, float]:
    nb_fn, np_fn = kernels.PAIRS[name]
    nb_fn(*args)  # compile
    t_nb = min(timeit.repeat(lambda: nb_fn(*args), number=1, repeat=repeat))
    t_np = min(timeit.repeat(lambda: np_fn(*args), number=1, repeat=repeat))
    return t_nb, t_np


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20, help="timing repeats; the minimum is reported")
    ap.add_argument("--kernel", action="append", choices=sorted(kernels.PAIRS), help="restrict to these kernels")
    ap.add_argument("--seed", type=int, default=0, help="input generator seed")
    args = ap.parse_args(argv)

    inputs = _inputs(np.random.default_rng(args.seed))
    names = args.kernel or list(kernels.PAIRS)
    print(f"numba active: {USE_JIT}")
    print(f"{'kernel':<22}{'numba [us]':>14}{'numpy [us]':>14}{'speedup':>10}")
    for name in names:
        t_nb, t_np = bench(name, inputs[name], args.repeat)
        print(f"{name:<22}{t_nb * 1e6:>14.1f}{t_np * 1e6:>14.1f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
