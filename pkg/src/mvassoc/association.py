"""Outer cross-validated association estimate and its influence-function inference.

Three layers of cross-validation: outer K folds estimate performance, an
intermediate K_circ-fold layer inside each outer training set picks the
outcome weights, and K_star-fold super learners sit inside that.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .data import Dataset, FoldAssignment, folds_from_labels, make_folds
from .errors import BadFoldCount, DegenerateNull
from .learners import LearnerSpec
from .superlearner import FitScheduler, derive_seed, ensembles_on
from .weights import CompositeObjective, OmegaOptions, WeightSearchResult, optimize_objective

MSE_FLOOR = 1e-12

# seed-path tags for the different layers
_OUTER, _SL, _OMEGA = 1, 2, 3


class FoldPlan:
    """Fold assignments for every layer of the nested procedure.

    In random mode each layer draws its own seeded partition. In lattice mode
    the outer folds are the atoms of a lattice: any working set is a union of
    atoms and its folds are exactly those atoms, which is what lets fits be
    shared between layers.
    """

    def __init__(self, n: int, K: int, K_circ: int, K_star: int, seed: int, lattice: bool = False):
        self.n, self.K, self.K_circ, self.K_star = n, K, K_circ, K_star
        self.seed = int(seed)
        self.lattice = lattice
        if lattice and K < 4:
            raise BadFoldCount(
                "fold lattice needs K >= 4: with K = 3 the innermost training sets are empty"
            )
        self.outer = make_folds(n, K, derive_seed(seed, _OUTER))

    def _check(self, work_idx, k):
        if len(work_idx) < 2 * k:
            raise BadFoldCount(f"working set of {len(work_idx)} rows is too small for {k} folds")

    def _atoms(self, work_idx) -> FoldAssignment:
        return folds_from_labels(self.outer.fold_of[work_idx])

    def sl(self, work_idx: np.ndarray, *path: int) -> FoldAssignment:
        if self.lattice:
            f = self._atoms(work_idx)
            self._check(work_idx, f.K)
            return f
        self._check(work_idx, self.K_star)
        return make_folds(len(work_idx), self.K_star, derive_seed(self.seed, _SL, *path))

    def omega(self, work_idx: np.ndarray, *path: int) -> FoldAssignment:
        if self.lattice:
            f = self._atoms(work_idx)
            self._check(work_idx, f.K)
            return f
        self._check(work_idx, self.K_circ)
        return make_folds(len(work_idx), self.K_circ, derive_seed(self.seed, _OMEGA, *path))


def _resolve_folds(K, K_circ, K_star, reuse):
    if reuse:
        if K < 4:
            raise BadFoldCount("fold-lattice reuse needs K >= 4")
        if K_circ not in (None, K - 1) or K_star not in (None, K - 2):
            raise BadFoldCount("fold-lattice reuse fixes K_circ = K - 1 and K_star = K - 2")
        return K, K - 1, K - 2
    return K, K if K_circ is None else K_circ, K if K_star is None else K_star


def omega_procedure(sched: FitScheduler, plan: FoldPlan, work_idx: np.ndarray, folds: FoldAssignment,
                    path: tuple, opts: OmegaOptions) -> tuple[WeightSearchResult, CompositeObjective]:
    """Choose outcome weights on ``work_idx`` by ``folds``-fold cross-validated R²."""
    J = sched.data.J
    outcomes = range(J)
    P = np.empty((work_idx.size, J))
    X = sched.data.covariates
    for l in range(folds.K):
        train = work_idx[folds.training(l)]
        val = folds.validation(l)
        ens = ensembles_on(sched, train, plan.sl(train, *path, l), outcomes, "omega-sl")
        Xv = X[work_idx[val]]
        for j, e in enumerate(ens):
            P[val, j] = e.predict(Xv)
    obj = CompositeObjective(sched.data.outcomes[work_idx], P, folds)
    return optimize_objective(obj, opts), obj


@dataclass(frozen=True)
class InfluenceCurves:
    """Fold-centered squared-error contributions for the composite and null predictors.

    ``d_model[i]`` and ``d_null[i]`` belong to observation ``i``, which sits in
    validation fold ``folds.fold_of[i]``.
    """

    folds: FoldAssignment
    d_model: np.ndarray
    d_null: np.ndarray
    mse_model: float
    mse_null: float

    @property
    def gradient(self) -> np.ndarray:
        return np.array([1.0 / self.mse_model, -1.0 / self.mse_null])

    def stacked(self) -> np.ndarray:
        return np.column_stack([self.d_model, self.d_null])


def fold_covariance(folds: FoldAssignment, I: np.ndarray) -> np.ndarray:
    """(1/K) sum_k (1/|V_k|) sum_{i in V_k} I_i I_i^T."""
    sizes = folds.sizes().astype(float)
    w = 1.0 / (folds.K * sizes[folds.fold_of])
    return I.T @ (I * w[:, None])


def influence_variance(curves: InfluenceCurves) -> float:
    """Plug-in asymptotic variance of the log MSE ratio."""
    if curves.mse_model <= MSE_FLOOR or curves.mse_null <= MSE_FLOOR:
        raise DegenerateNull("MSE too small to form the log ratio")
    g = curves.gradient
    # a quadratic form in a PSD matrix; clamp rounding below zero
    return max(float(g @ fold_covariance(curves.folds, curves.stacked()) @ g), 0.0)


def wald_interval(log_ratio: float, se: float, alpha: float = 0.05) -> tuple[float, float]:
    """1 - exp(log_ratio -/+ z se), as an ordered pair."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    z = float(ndtri(1.0 - alpha / 2.0))
    a = 1.0 - math.exp(log_ratio + z * se)
    b = 1.0 - math.exp(log_ratio - z * se)
    return (min(a, b), max(a, b))


@dataclass(frozen=True)
class NullTest:
    reject: bool
    p_value: float
    statistic: float


def one_sided_test(log_ratio: float, se: float, alpha: float = 0.05) -> NullTest:
    """Reject no-association when log_ratio / se < z_alpha; p = Phi(statistic)."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    if se > 0:
        stat = log_ratio / se
    elif log_ratio == 0:
        stat = 0.0
    else:
        stat = math.copysign(math.inf, log_ratio)
    p = float(ndtr(stat))
    return NullTest(bool(stat < ndtri(alpha)), p, stat)


@dataclass(frozen=True)
class AssociationEstimate:
    mse_model: float
    mse_null: float
    r2: float
    log_ratio: float
    sigma2: float
    ci_lower: float
    ci_upper: float
    p_value: float
    n: int
    alpha: float
    per_fold: tuple = field(default=(), repr=False)
    curves: InfluenceCurves | None = field(default=None, repr=False)
    fits: int = 0
    fits_by_role: dict = field(default_factory=dict, repr=False)

    @property
    def se(self) -> float:
        return math.sqrt(self.sigma2 / self.n)

    @property
    def reject(self) -> bool:
        return one_sided_test(self.log_ratio, self.se, self.alpha).reject

    def to_dict(self) -> dict:
        return {
            "r2": self.r2,
            "ci": [self.ci_lower, self.ci_upper],
            "p_value": self.p_value,
            "reject": self.reject,
            "alpha": self.alpha,
            "log_ratio": self.log_ratio,
            "sigma2": self.sigma2,
            "se_log_ratio": self.se,
            "mse_model": self.mse_model,
            "mse_null": self.mse_null,
            "n": self.n,
            "no_meaningful_association": self.r2 <= 0,
            "per_fold": list(self.per_fold),
            "fits": self.fits,
            "fits_by_role": dict(self.fits_by_role),
        }


def wald_ci(est: AssociationEstimate, alpha: float = 0.05) -> tuple[float, float]:
    return wald_interval(est.log_ratio, est.se, alpha)


def test_null(est: AssociationEstimate, alpha: float = 0.05) -> NullTest:
    return one_sided_test(est.log_ratio, est.se, alpha)


test_null.__test__ = False  # not a pytest test despite the name


def _outer_fold(sched, plan, k, opts):
    data = sched.data
    T = plan.outer.training(k)
    V = plan.outer.validation(k)
    ens = ensembles_on(sched, T, plan.sl(T, k), range(data.J), "outer-sl")
    wres, _ = omega_procedure(sched, plan, T, plan.omega(T, k), (k,), opts)
    w = wres.omega.w
    Y = data.outcomes
    PV = np.column_stack([e.predict(data.covariates[V]) for e in ens])
    yV = Y[V] @ w
    mean_T = float((Y[T] @ w).mean())
    r_model = (yV - PV @ w) ** 2
    r_null = (yV - mean_T) ** 2
    return V, w, r_model, r_null, wres


def assemble_estimate(folds: FoldAssignment, r_model: np.ndarray, r_null: np.ndarray,
                      alpha: float = 0.05, per_fold: Sequence = (), fits=0, fits_by_role=None) -> AssociationEstimate:
    """Estimate and inference from per-observation squared errors on validation folds."""
    K = folds.K
    mse_k = np.array([r_model[folds.fold_of == k].mean() for k in range(K)])
    null_k = np.array([r_null[folds.fold_of == k].mean() for k in range(K)])
    if (null_k <= MSE_FLOOR).any():
        raise DegenerateNull("a fold's null-model MSE is numerically zero")
    mse_model = float(mse_k.mean())
    mse_null = float(null_k.mean())
    d_model = r_model - mse_k[folds.fold_of]
    d_null = r_null - null_k[folds.fold_of]
    curves = InfluenceCurves(folds, d_model, d_null, mse_model, mse_null)
    if mse_model <= MSE_FLOOR:
        # (numerically) perfect prediction: the log ratio has no usable
        # linearisation, so report R² with a degenerate interval
        sigma2 = 0.0
        log_ratio = math.log(mse_model / mse_null) if mse_model > 0 else -math.inf
    else:
        sigma2 = influence_variance(curves)
        log_ratio = math.log(mse_model / mse_null)
    n = folds.n
    se = math.sqrt(sigma2 / n)
    lo, hi = wald_interval(log_ratio, se, alpha)
    test = one_sided_test(log_ratio, se, alpha)
    pf = list(per_fold) or [{} for _ in range(K)]
    pf = tuple(dict(d, fold=k, size=int((folds.fold_of == k).sum()), mse_model=float(mse_k[k]),
                    mse_null=float(null_k[k])) for k, d in enumerate(pf))
    return AssociationEstimate(
        mse_model=mse_model, mse_null=mse_null, r2=1.0 - math.exp(log_ratio), log_ratio=log_ratio,
        sigma2=sigma2, ci_lower=lo, ci_upper=hi, p_value=test.p_value, n=n, alpha=alpha,
        per_fold=pf, curves=curves, fits=fits, fits_by_role=dict(fits_by_role or {}),
    )


def estimate_association(specs: Sequence, data: Dataset, K: int = 10, K_circ: int | None = None,
                         K_star: int | None = None, seed: int = 0, reuse: bool = False, *,
                         lattice: bool | None = None, alpha: float = 0.05,
                         omega_opts: OmegaOptions | None = None, threads: int = 1,
                         scheduler: FitScheduler | None = None) -> AssociationEstimate:
    """Cross-validated R² of the composite super learner with Wald CI and one-sided test.

    ``reuse=True`` ties the layers to a fold lattice (K_circ = K - 1,
    K_star = K - 2) and caches fits across layers. ``lattice=True`` with
    ``reuse=False`` uses the same lattice folds without the cache, which must
    give the same estimate.
    """
    specs = [LearnerSpec.coerce(s) for s in specs]
    lattice = reuse if lattice is None else lattice
    if lattice and not reuse:
        _resolve_folds(K, K_circ, K_star, True)
        K_circ, K_star = K - 1, K - 2
    K, K_circ, K_star = _resolve_folds(K, K_circ, K_star, reuse)
    plan = FoldPlan(data.n, K, K_circ, K_star, seed, lattice)
    sched = scheduler or FitScheduler(specs, data, seed, cache=reuse)
    opts = omega_opts or OmegaOptions()
    fits_before = sched.fits
    roles_before = dict(sched.by_role)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda k: _outer_fold(sched, plan, k, opts), range(K)))
    else:
        results = [_outer_fold(sched, plan, k, opts) for k in range(K)]
    r_model = np.empty(data.n)
    r_null = np.empty(data.n)
    per_fold = []
    for V, w, rm, rn, wres in results:
        r_model[V] = rm
        r_null[V] = rn
        per_fold.append({"omega": w.tolist(), "omega_cv_r2": wres.r2_at_omega})
    roles = {r: c - roles_before.get(r, 0) for r, c in sched.by_role.items()}
    return assemble_estimate(plan.outer, r_model, r_null, alpha, per_fold,
                             sched.fits - fits_before, {r: c for r, c in roles.items() if c})


def estimate_weights(specs: Sequence, data: Dataset, K_circ: int = 10, K_star: int = 10, seed: int = 0,
                     omega_opts: OmegaOptions | None = None,
                     scheduler: FitScheduler | None = None) -> WeightSearchResult:
    """Full-data outcome weights: the weight search applied to every observation."""
    specs = [LearnerSpec.coerce(s) for s in specs]
    plan = FoldPlan(data.n, max(K_circ, 2), K_circ, K_star, seed, lattice=False)
    sched = scheduler or FitScheduler(specs, data, seed)
    work = np.arange(data.n)
    folds = make_folds(data.n, K_circ, derive_seed(seed, _OMEGA, 0))
    res, _ = omega_procedure(sched, plan, work, folds, (1_000_000,), omega_opts or OmegaOptions())
    return res
