"""Outcome weights maximising the cross-validated R² of the composite predictor."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .data import Dataset, FoldAssignment, SimplexWeights
from .errors import DegenerateNull, OptimizerFailure

NULL_FLOOR = 1e-12
ARMIJO = 0.5


class CompositeObjective:
    """Cross-validated R² of ``Y @ w`` predicted by ``P @ w``, as a function of ``w``.

    ``Y`` and ``P`` are (rows x J) outcome and out-of-fold prediction
    matrices for the working set and ``folds`` labels their rows. Because
    predictions combine linearly in ``w``, both MSEs are quadratic forms and
    are precomputed as J x J matrices: ``model`` averages fold-wise residual
    cross-products over folds, ``null`` is the in-sample covariance of ``Y``.
    """

    def __init__(self, Y: np.ndarray, P: np.ndarray, folds: FoldAssignment):
        Y = np.asarray(Y, dtype=float)
        P = np.asarray(P, dtype=float)
        self.J = Y.shape[1]
        R = Y - P
        sizes = folds.sizes().astype(float)
        w = 1.0 / (folds.K * sizes[folds.fold_of])
        self.model = R.T @ (R * w[:, None])
        Yc = Y - Y.mean(axis=0)
        self.null = Yc.T @ Yc / Y.shape[0]

    def mses(self, w) -> tuple[float, float]:
        w = np.asarray(w, dtype=float)
        return float(w @ self.model @ w), float(w @ self.null @ w)

    def value(self, w) -> float:
        a, b = self.mses(w)
        if b <= NULL_FLOOR:
            raise DegenerateNull("composite outcome is numerically constant")
        return 1.0 - a / b

    def gradient(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        Aw = self.model @ w
        Cw = self.null @ w
        a = float(w @ Aw)
        b = float(w @ Cw)
        return -2.0 * (Aw * b - Cw * a) / (b * b)


@dataclass(frozen=True)
class OmegaOptions:
    tol: float = 1e-6
    max_iter: int = 1000
    extra_starts: int = 0
    seed: int = 0


@dataclass(frozen=True)
class WeightSearchResult:
    omega: SimplexWeights
    r2_at_omega: float
    trace: tuple = field(default=(), repr=False)
    starts: tuple = field(default=(), repr=False)

    @property
    def no_association(self) -> bool:
        return self.r2_at_omega <= 0.0


def _ascend(obj: CompositeObjective, x: np.ndarray, opts: OmegaOptions):
    """Projected-gradient ascent with Armijo backtracking from ``x``."""
    f = obj.value(x)
    trace = [(f, x.copy())]
    step = 1.0
    for _ in range(opts.max_iter):
        g = obj.gradient(x)
        # gradient-mapping stationarity at unit step
        if np.abs(kernels.project_simplex(x + g) - x).max() <= opts.tol:
            return x, f, trace, True
        t = step
        while True:
            xn = kernels.project_simplex(x + t * g)
            try:
                fn = obj.value(xn)
            except DegenerateNull:
                fn = -np.inf
            # a large sufficient-increase constant rules out the overshooting
            # steps that make projected gradient zig-zag on flat objectives
            if fn >= f + ARMIJO * float(g @ (xn - x)):
                break
            t *= 0.5
            if t < 1e-14:
                return x, f, trace, True
        moved = np.abs(xn - x).max()
        x, f = xn, fn
        trace.append((f, x.copy()))
        if moved <= 1e-15:
            return x, f, trace, True
        step = min(t * 2.0, 1e6)
    return x, f, trace, False


def optimize_objective(obj: CompositeObjective, opts: OmegaOptions = OmegaOptions()) -> WeightSearchResult:
    """Multi-start maximisation over the simplex: center, every vertex, extra random starts."""
    J = obj.J
    if J == 1:
        return WeightSearchResult(SimplexWeights(np.ones(1)), obj.value(np.ones(1)), (), ())
    starts = [np.full(J, 1.0 / J)] + [np.eye(J)[j] for j in range(J)]
    if opts.extra_starts:
        rng = np.random.default_rng(opts.seed)
        starts += list(rng.dirichlet(np.ones(J), size=opts.extra_starts))
    best = None
    trace = []
    start_values = []
    for s in starts:
        try:
            start_values.append(obj.value(s))
            x, f, tr, ok = _ascend(obj, s.copy(), opts)
        except DegenerateNull:
            continue
        trace.extend(tr)
        # strict improvement keeps the first-found best on ties
        if ok and (best is None or f > best[1] + 1e-12):
            best = (x, f)
    if best is None:
        raise OptimizerFailure("no start of the outcome-weight search converged")
    w = np.maximum(best[0], 0.0)
    w /= w.sum()
    return WeightSearchResult(SimplexWeights(w), obj.value(w), tuple(trace), tuple(start_values))


def _oof_matrix(fold_fits, data: Dataset, folds: FoldAssignment, work_idx):
    work_idx = np.arange(data.n) if work_idx is None else np.sort(np.asarray(work_idx))
    P = np.empty((work_idx.size, data.J))
    for k in range(folds.K):
        val = folds.validation(k)
        Xv = data.covariates[work_idx[val]]
        for j in range(data.J):
            P[val, j] = fold_fits[k][j].predict(Xv)
    return data.outcomes[work_idx], P


def composite_cv_r2(omega, fold_fits: Sequence[Sequence], data: Dataset, folds: FoldAssignment,
                    work_idx=None) -> float:
    """Cross-validated R² of the composite super learner at weights ``omega``.

    ``fold_fits[k][j]`` is the fitted predictor for outcome ``j`` trained
    without fold ``k`` of ``work_idx``. The null MSE uses the in-sample mean of
    the composite outcome over the whole working set.
    """
    w = np.asarray(omega, dtype=float)
    Y, P = _oof_matrix(fold_fits, data, folds, work_idx)
    yw = Y @ w
    r = yw - P @ w
    fold_mse = np.array([np.mean(r[folds.fold_of == k] ** 2) for k in range(folds.K)])
    mse_model = fold_mse.mean()
    mse_null = np.mean((yw - yw.mean()) ** 2)
    if mse_null <= NULL_FLOOR:
        raise DegenerateNull("composite outcome is numerically constant")
    return 1.0 - mse_model / mse_null


def optimize_omega(fold_fits, data: Dataset, folds: FoldAssignment,
                   opts: OmegaOptions = OmegaOptions(), work_idx=None) -> WeightSearchResult:
    """Outcome weights maximising :func:`composite_cv_r2`."""
    Y, P = _oof_matrix(fold_fits, data, folds, work_idx)
    return optimize_objective(CompositeObjective(Y, P, folds), opts)
