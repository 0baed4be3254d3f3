"""Compare the compiled and pure-Python lattice kernels.

    python3 benchmarks/bench_kernels.py [--sizes 50 100 200] [--repeat 3]

The first table times each kernel on square lattices with both backends
and checks that they agree. The second runs the ADMM aligner end to end
on problems whose edge terms pull away from the node-only path, once per
backend, and reports iterations and wall time. These problems usually
hit the iteration cap: the two copies keep trading shifted segments.
"""

import argparse
import time

import numpy as np

from coevalign import aligner, dp
from coevalign.aligner import AlignProblem
from coevalign.lattice import vertex_valid_mask
from coevalign.potentials import EdgePotentialTable


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def kernel_table(sizes, repeat, rng):
    py = dp.get_backend("python")
    try:
        cy = dp.get_backend("cython")
    except ImportError as exc:
        print(f"compiled kernels unavailable ({exc}); timing the Python backend only")
        cy = None
    print(f"{'kernel':<16}{'size':>6}{'python s':>12}{'cython s':>12}{'speedup':>10}{'max diff':>12}")
    for L in sizes:
        E = rng.normal(size=(3, 3, L + 1, L + 1))
        F = py.forward(E)
        B = py.backward(E)
        g = rng.normal(size=(L + 1, L + 1, 3))
        calls = {
            "forward": lambda k: k.forward(E),
            "backward": lambda k: k.backward(E),
            "expect_forward": lambda k: k.expect_forward(E, F, g),
            "expect_backward": lambda k: k.expect_backward(E, B, g),
            "viterbi": lambda k: np.asarray(k.viterbi(E)[0], dtype=float),
        }
        for name, call in calls.items():
            tp, out_p = best_time(lambda: call(py), repeat)
            if cy is None:
                print(f"{name:<16}{L:>6}{tp:>12.4f}{'-':>12}{'-':>10}{'-':>12}")
                continue
            tc, out_c = best_time(lambda: call(cy), repeat)
            fin = np.isfinite(out_p)
            diff = float(np.max(np.abs(out_p[fin] - out_c[fin]))) if fin.any() else 0.0
            print(f"{name:<16}{L:>6}{tp:>12.4f}{tc:>12.5f}{tp / tc:>10.1f}{diff:>12.1e}")


def random_problem(rng, L, n_terms):
    """Noisy diagonal node scores; edge terms reward pairs a few columns off it.

    Every term has one end on the diagonal, so the decomposition sees all
    of them. Weights scale with ``L`` because the objective divides edge
    terms by the path length.
    """
    theta = rng.normal(0, 0.3, (L + 1, L + 1, 3)) * vertex_valid_mask(L, L)
    d = np.arange(1, L + 1)
    theta[d, d, 0] += 0.5
    entries, seen = [], set()
    while len(entries) < n_terms:
        i = int(rng.integers(0, L - 8))
        k = i + int(rng.integers(6, min(L - i, 40)))
        shift = int(rng.integers(1, 3))
        j, l = i, min(k + shift, L - 1)
        if (i, k, j, l) not in seen and j < l:
            seen.add((i, k, j, l))
            entries.append((i, k, j, l, rng.uniform(1.0, 4.0) * L))
    return AlignProblem(theta, EdgePotentialTable.from_entries(entries))


def admm_table(sizes, rng):
    print(f"\n{'L':>5}{'terms':>7}{'backend':>9}{'iters':>7}{'converged':>11}{'seconds':>10}{'objective':>12}")
    for L in sizes:
        prob = random_problem(rng, L, L)
        for name in ("python", "cython"):
            try:
                dp._impl = dp.get_backend(name)
            except ImportError:
                continue
            t0 = time.perf_counter()
            res = aligner.admm_align(prob)
            dt = time.perf_counter() - t0
            print(f"{L:>5}{L:>7}{name:>9}{res.iterations:>7}{str(res.converged):>11}{dt:>10.3f}"
                  f"{res.objective:>12.4f}")
    dp._impl = dp.get_backend()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[50, 100, 200])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"default backend: {dp.BACKEND}\n")
    kernel_table(args.sizes, args.repeat, rng)
    admm_table(args.sizes, rng)


if __name__ == "__main__":
    main()
