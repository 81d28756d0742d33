"""Time the compiled kernels against the NumPy fallback.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``. Both
implementations are called on identical inputs and their outputs are
compared before timing, so the table is only printed for agreeing kernels.
"""

import argparse
import timeit

import numpy as np

from mvassoc import _kernels_py

try:
    from mvassoc import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _simplex_lsq_case(rng, M=8, n=500):
    Z = rng.normal(size=(n, M))
    y = Z[:, :3].mean(axis=1) + rng.normal(scale=0.5, size=n)
    return (Z.T @ Z / n, Z.T @ y / n), {}


def _stepwise_case(rng, D=30, n=1000):
    X = rng.normal(size=(n, D))
    y = X[:, :5] @ rng.normal(size=5) + rng.normal(size=n)
    Xc, yc = X - X.mean(axis=0), y - y.mean()
    return (Xc.T @ Xc, Xc.T @ yc, float(yc @ yc), float(n)), {}


def _project_case(rng, J=50):
    return (rng.normal(size=J) * 3,), {}


CASES = {
    "simplex_lsq": _simplex_lsq_case,
    "forward_stepwise": _stepwise_case,
    "project_simplex": _project_case,
}


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), atol=1e-10)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=2000, help="calls per timing")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels are not built; only the fallback is available")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<18}{'python us/call':>16}{'cython us/call':>16}{'speedup':>10}")
    for name, make in CASES.items():
        a, kw = make(rng)
        py = getattr(_kernels_py, name)
        t_py = min(timeit.repeat(lambda: py(*a, **kw), number=args.repeat, repeat=3)) / args.repeat
        if _ckernels is None:
            print(f"{name:<18}{t_py * 1e6:>16.2f}{'-':>16}{'-':>10}")
            continue
        cy = getattr(_ckernels, name)
        if not _same(py(*a, **kw), cy(*a, **kw)):
            raise SystemExit(f"{name}: implementations disagree")
        t_cy = min(timeit.repeat(lambda: cy(*a, **kw), number=args.repeat, repeat=3)) / args.repeat
        print(f"{name:<18}{t_py * 1e6:>16.2f}{t_cy * 1e6:>16.2f}{t_py / t_cy:>9.1f}x")


if __name__ == "__main__":
    main()
