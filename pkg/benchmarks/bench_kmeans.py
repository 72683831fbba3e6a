"""Compare the compiled and pure-Python clustering kernels.

    python3 benchmarks/bench_kmeans.py [--repeat N]

Both backends receive identical inputs for the Lloyd iteration and for the
point-transfer refinement that follows it; the script checks that their
outputs agree exactly and reports the median wall time per call and the
speed-up.
"""

import argparse
import statistics
import time

import numpy as np

from tassel.components import _lloyd_py, kernels
from tassel.components.kmeans import kmeans_plusplus

# (pixels, features, k): a small object, a typical one, a large one
CASES = ((16, 96, 2), (36, 96, 6), (400, 96, 10))


def _time(fn, repeat):
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args(argv)
    if kernels.compiled_lloyd is None:
        print("compiled kernel not built; only the Python kernel is available")
        return 1
    gen = np.random.default_rng(0)
    from tassel.components import _lloyd

    print(f"{'kernel':>7} {'P':>5} {'D':>4} {'k':>3} {'python ms':>10} {'compiled ms':>12} {'speed-up':>9}")
    for P, D, k in CASES:
        X = gen.random((P, D))
        C0 = kmeans_plusplus(X, k, np.random.default_rng(1))
        ref = kernels.python_lloyd(X, C0.copy(), 100, 1e-6)
        got = kernels.compiled_lloyd(X, C0.copy(), 100, 1e-6)
        if not (np.array_equal(ref[0], got[0]) and np.array_equal(ref[1], got[1])):
            raise SystemExit(f"Lloyd kernels disagree for P={P}, k={k}")
        tp = _time(lambda: kernels.python_lloyd(X, C0.copy(), 100, 1e-6), args.repeat)
        tc = _time(lambda: kernels.compiled_lloyd(X, C0.copy(), 100, 1e-6), args.repeat)
        print(f"{'lloyd':>7} {P:>5} {D:>4} {k:>3} {1e3 * tp:>10.3f} {1e3 * tc:>12.3f} {tp / tc:>8.1f}x")
        # start the refinement from a deliberately poor partition so it has work to do
        labels = np.arange(P) % k
        C = np.stack([X[labels == j].mean(axis=0) for j in range(k)])
        ref = _lloyd_py.transfer_refine(X, C, labels, 100)
        got = _lloyd.transfer_refine(X, C, labels, 100)
        if not (ref[0].tobytes() == got[0].tobytes() and np.array_equal(ref[1], got[1])):
            raise SystemExit(f"refinement kernels disagree for P={P}, k={k}")
        tp = _time(lambda: _lloyd_py.transfer_refine(X, C, labels, 100), args.repeat)
        tc = _time(lambda: _lloyd.transfer_refine(X, C, labels, 100), args.repeat)
        print(f"{'refine':>7} {P:>5} {D:>4} {k:>3} {1e3 * tp:>10.3f} {1e3 * tc:>12.3f} {tp / tc:>8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
