"""Classical comparators: canonical-correlation statistics with permutation
p-values, and a regression F-test on the first principal component of Y."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import SingularError

STATISTICS = ("wilks", "hotelling-lawley", "pillai-bartlett", "roy")
COND_LIMIT = 1e12


@dataclass(frozen=True)
class CcaStatistics:
    eigenvalues: np.ndarray
    wilks: float
    hotelling_lawley: float
    pillai_bartlett: float
    roy: float

    def get(self, name: str) -> float:
        return getattr(self, name.replace("-", "_"))


def _orthobasis(A: np.ndarray, what: str) -> np.ndarray:
    """Orthonormal basis of the centered columns of ``A`` (full column rank required)."""
    Ac = A - A.mean(axis=0)
    U, s, _ = np.linalg.svd(Ac, full_matrices=False)
    if s.size == 0 or s[-1] <= s[0] / COND_LIMIT:
        raise SingularError(f"{what} is rank deficient after centering")
    return U


def _from_correlations(rho: np.ndarray) -> CcaStatistics:
    rho = np.clip(rho, 0.0, 1.0)
    one_minus = 1.0 - rho * rho
    if one_minus.min() <= 1.0 / COND_LIMIT:
        raise SingularError("error cross-product matrix is singular (perfect canonical correlation)")
    lam = np.sort(rho * rho / one_minus)[::-1]
    return CcaStatistics(
        eigenvalues=lam,
        wilks=float(np.prod(1.0 / (1.0 + lam))),
        hotelling_lawley=float(lam.sum()),
        pillai_bartlett=float((lam / (1.0 + lam)).sum()),
        roy=float(lam[0]),
    )


def cca_statistics(X: np.ndarray, Y: np.ndarray) -> CcaStatistics:
    """Wilks, Hotelling-Lawley, Pillai-Bartlett and Roy statistics for Y on X.

    The eigenvalues of H E^-1 are obtained from canonical correlations
    (singular values of Qx' Qy) as rho^2 / (1 - rho^2).
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    n = X.shape[0]
    if n <= X.shape[1] + Y.shape[1]:
        raise SingularError(f"need n > D + J (n={n}, D={X.shape[1]}, J={Y.shape[1]})")
    Qx = _orthobasis(X, "X")
    Qy = _orthobasis(Y, "Y")
    rho = np.linalg.svd(Qx.T @ Qy, compute_uv=False)
    return _from_correlations(rho)


@dataclass(frozen=True)
class PermutationResult:
    statistic: str
    observed: float
    B: int
    p_value: float
    direction: str
    discarded: int = 0


def _extreme_count(stat: str, observed: float, draws: np.ndarray) -> int:
    tol = 1e-12 * max(1.0, abs(observed))
    if stat == "wilks":
        return int((draws <= observed + tol).sum())
    return int((draws >= observed - tol).sum())


def permutation_tests(X, Y, B: int = 1000, seed=0, statistics=STATISTICS) -> dict[str, PermutationResult]:
    """Permutation p-values for several statistics from one set of row permutations of X.

    Each draw has its own seed derived from ``seed``. Draws where the
    statistic cannot be computed are discarded and redrawn, at most
    ``B // 10`` times.
    """
    if B < 19:
        raise ValueError("need at least 19 permutations")
    for s in statistics:
        if s not in STATISTICS:
            raise ValueError(f"unknown statistic {s!r}; valid: {', '.join(STATISTICS)}")
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    observed = cca_statistics(X, Y)
    Qx = _orthobasis(X, "X")
    Qy = _orthobasis(Y, "Y")
    n = X.shape[0]
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = root.spawn(B + B // 10)
    draws = {s: [] for s in statistics}
    discarded = 0
    used = 0
    for ss in seeds:
        if used == B:
            break
        perm = np.random.default_rng(ss).permutation(n)
        rho = np.linalg.svd(Qx[perm].T @ Qy, compute_uv=False)
        try:
            st = _from_correlations(rho)
        except SingularError:
            discarded += 1
            continue
        used += 1
        for s in statistics:
            draws[s].append(st.get(s))
    if used < B:
        raise SingularError(f"too many singular permutation draws ({discarded})")
    out = {}
    for s in statistics:
        obs = observed.get(s)
        count = _extreme_count(s, obs, np.asarray(draws[s]))
        out[s] = PermutationResult(s, obs, B, (1 + count) / (B + 1),
                                   "smaller" if s == "wilks" else "larger", discarded)
    return out


def permutation_test(X, Y, statistic: str = "wilks", B: int = 1000, seed=0) -> PermutationResult:
    return permutation_tests(X, Y, B, seed, (statistic,))[statistic]


@dataclass(frozen=True)
class PcaFTest:
    reject: bool
    p_value: float
    F: float
    df: tuple[int, int]
    loadings: np.ndarray
    explained: float


def first_principal_component(Y: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Loadings and scores of the first PC of column-standardized Y.

    The loading vector's largest-magnitude entry is made positive.
    """
    Y = np.asarray(Y, dtype=float)
    Z = (Y - Y.mean(axis=0)) / Y.std(axis=0, ddof=1)
    R = Z.T @ Z / (Z.shape[0] - 1)
    evals, evecs = np.linalg.eigh(R)
    v = evecs[:, -1]
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return v, Z @ v, float(evals[-1] / evals.sum())


def pca_f_test(X, Y, alpha: float = 0.05) -> PcaFTest:
    """Overall F-test of the regression of the first PC score of Y on all of X."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, D = X.shape
    if n <= D + 1:
        raise SingularError(f"need n > D + 1 (n={n}, D={D})")
    v, score, explained = first_principal_component(Y)
    Qx = _orthobasis(X, "X")
    s = score - score.mean()
    ssr = float(np.sum((Qx.T @ s) ** 2))
    sst = float(s @ s)
    sse = sst - ssr
    df1, df2 = D, n - D - 1
    F = (ssr / df1) / (sse / df2) if sse > 0 else np.inf
    p = float(stats.f.sf(F, df1, df2))
    return PcaFTest(bool(p < alpha), p, float(F), (df1, df2), v, explained)
