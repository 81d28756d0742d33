"""Cross-validated stacking (super learner) and the fit scheduler.

The scheduler is the single place candidate learners are fitted during a
pipeline run. It counts every fit, tags it with the pipeline role that
requested it, and in fold-lattice reuse mode caches fits by
``(outcome, learner, training set)`` so that identical training sets across
layers are fitted once.
"""

from __future__ import annotations

import threading
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import kernels
from .data import Dataset, FoldAssignment, SimplexWeights, make_folds
from .errors import BadFoldCount, LearnerError, MvAssocError, OptimizerFailure
from .learners import LearnerSpec, Predictor, fit_arrays, index_digest

DROP_THRESHOLD = 1e-4
TIE_RIDGE = 1e-12


def derive_seed(seed: int, *path: int) -> np.random.SeedSequence:
    """Child seed for a position in the pipeline (outer fold, inner fold, ...)."""
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))


def _learner_seed(seed: int, m: int, j: int, digest: str) -> int:
    ss = np.random.SeedSequence(entropy=[int(seed), m, j, int(digest, 16)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


class FitScheduler:
    """Fits candidate learners for a fixed library and dataset.

    With ``cache=True`` a fit for a given (outcome, learner, training set) is
    performed at most once; later requests reuse it.
    """

    def __init__(self, specs: Sequence[LearnerSpec], data: Dataset, seed: int = 0, cache: bool = False):
        self.specs = [LearnerSpec.coerce(s) for s in specs]
        self.data = data
        self.seed = int(seed)
        self.cache: dict | None = {} if cache else None
        self.fits = 0
        self.by_role: Counter = Counter()
        self._lock = threading.Lock()

    @property
    def M(self) -> int:
        return len(self.specs)

    def fit_all(self, train_idx: np.ndarray, outcomes: Sequence[int], role: str = "") -> dict:
        """Fit every learner for every outcome in ``outcomes`` on ``train_idx``.

        Returns ``{(j, m): Predictor}``.
        """
        idx = np.sort(np.asarray(train_idx, dtype=np.int64))
        digest = index_digest(idx)
        X = None
        out = {}
        for j in outcomes:
            y = None
            for m, spec in enumerate(self.specs):
                key = (j, m, digest)
                if self.cache is not None:
                    with self._lock:
                        hit = self.cache.get(key)
                    if hit is not None:
                        out[j, m] = hit
                        continue
                if X is None:
                    X = self.data.covariates[idx]
                if y is None:
                    y = self.data.outcomes[idx, j]
                seed = _learner_seed(self.seed, m, j, digest) if spec.stochastic else 0
                try:
                    p = fit_arrays(spec, X, y, seed, digest)
                except MvAssocError as exc:
                    raise LearnerError(f"{spec.label} failed for outcome {j} ({role}): {exc}",
                                       learner=m, outcome=j) from exc
                with self._lock:
                    if self.cache is not None:
                        # insert-once: keep the first stored fit
                        p = self.cache.setdefault(key, p)
                    self.fits += 1
                    self.by_role[role] += 1
                out[j, m] = p
        return out


@dataclass(frozen=True)
class CvRiskTable:
    """Honest per-fold validation MSEs for each learner.

    ``oof`` holds the out-of-fold predictions (positions x learners) of the
    working set and ``y`` the matching outcome values.
    """

    learners: tuple[str, ...]
    fold_mse: np.ndarray
    oof: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    folds: FoldAssignment = field(repr=False)

    @property
    def mean_mse(self) -> np.ndarray:
        return self.fold_mse.mean(axis=1)

    @property
    def selector(self) -> int:
        """Index of the cross-validation selector (smallest average MSE)."""
        return int(np.argmin(self.mean_mse))

    def fold_weights(self) -> np.ndarray:
        """Per-position weights w_i with sum_i w_i r_i^2 equal to the fold-averaged MSE."""
        sizes = self.folds.sizes().astype(float)
        return 1.0 / (self.folds.K * sizes[self.folds.fold_of])

    def objective(self, beta) -> float:
        r = self.y - self.oof @ np.asarray(beta, dtype=float)
        return float(self.fold_weights() @ (r * r))


@dataclass(frozen=True)
class FittedEnsemble:
    beta: SimplexWeights
    members: tuple[tuple[int, Predictor], ...]
    outcome_index: int
    table: CvRiskTable | None = field(default=None, repr=False, compare=False)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.zeros(X.shape[0])
        for m, p in self.members:
            out += self.beta.w[m] * p.predict(X)
        return out


def _risk_table(specs, oof, y, folds) -> CvRiskTable:
    K = folds.K
    sq = (oof - y[:, None]) ** 2
    fold_mse = np.empty((oof.shape[1], K))
    for k in range(K):
        fold_mse[:, k] = sq[folds.fold_of == k].mean(axis=0)
    return CvRiskTable(tuple(s.label for s in specs), fold_mse, oof, y, folds)


def _oof_tables(sched: FitScheduler, work_idx: np.ndarray, folds: FoldAssignment,
                outcomes: Sequence[int], role: str) -> list[CvRiskTable]:
    """Out-of-fold predictions and risk tables for several outcomes at once."""
    work_idx = np.asarray(work_idx)
    if folds.n != work_idx.size:
        raise BadFoldCount("fold assignment does not match the working set")
    M = sched.M
    oof = {j: np.empty((work_idx.size, M)) for j in outcomes}
    X = sched.data.covariates
    for k in range(folds.K):
        val = folds.validation(k)
        fits = sched.fit_all(work_idx[folds.training(k)], outcomes, role)
        Xv = X[work_idx[val]]
        for j in outcomes:
            for m in range(M):
                try:
                    oof[j][val, m] = fits[j, m].predict(Xv)
                except MvAssocError as exc:
                    raise LearnerError(f"learner {m} fold {k}: {exc}", learner=m, fold=k, outcome=j) from exc
    Y = sched.data.outcomes
    return [_risk_table(sched.specs, oof[j], Y[work_idx, j], folds) for j in outcomes]


def cv_risk(specs, data: Dataset, j: int, folds: FoldAssignment, seed: int = 0,
            work_idx=None, scheduler: FitScheduler | None = None) -> CvRiskTable:
    """Cross-validated MSE of each learner for outcome ``j`` over ``work_idx``.

    ``folds`` partitions the positions of ``work_idx`` (all rows by default).
    """
    sched = scheduler or FitScheduler(specs, data, seed)
    work_idx = np.arange(data.n) if work_idx is None else np.sort(np.asarray(work_idx))
    return _oof_tables(sched, work_idx, folds, [j], "cv")[0]


def solve_beta(table: CvRiskTable) -> SimplexWeights:
    """Convex learner weights minimising the fold-averaged CV MSE of the stack.

    Solves the simplex-constrained least-squares problem exactly with an
    active-set method. A tiny ridge makes the problem strictly convex so that
    ties (e.g. duplicated learners) resolve to equal weights.
    """
    Z, y = table.oof, table.y
    M = Z.shape[1]
    if M == 1:
        return SimplexWeights(np.ones(1))
    # identical out-of-fold columns share their weight equally (exact tie-break)
    _, first, group = np.unique(Z.T, axis=0, return_index=True, return_inverse=True)
    group = np.asarray(group).ravel()
    if first.size < M:
        sub = replace(table, oof=Z[:, np.sort(first)])
        order = np.argsort(np.argsort(first))  # unique-row id -> column in sub
        b = solve_beta(sub).w
        counts = np.bincount(group, minlength=first.size)
        beta = b[order[group]] / counts[group]
        return SimplexWeights(beta / beta.sum())
    w = table.fold_weights()
    Zw = Z * w[:, None]
    Q = Z.T @ Zw
    c = Zw.T @ y
    Q = 0.5 * (Q + Q.T)
    Q = Q + TIE_RIDGE * max(float(np.trace(Q)) / M, 1e-300) * np.eye(M)
    beta, it = kernels.simplex_lsq(Q, c)
    if it < 0 or not np.isfinite(beta).all():
        raise OptimizerFailure("simplex least-squares for learner weights did not converge")
    beta = np.maximum(beta, 0.0)
    return SimplexWeights(beta / beta.sum())


def _prune(beta: SimplexWeights) -> SimplexWeights:
    b = np.where(beta.w >= DROP_THRESHOLD, beta.w, 0.0)
    if b.sum() <= 0:
        b = np.zeros_like(beta.w)
        b[int(np.argmax(beta.w))] = 1.0
    return SimplexWeights(b / b.sum())


def ensembles_on(sched: FitScheduler, work_idx: np.ndarray, folds: FoldAssignment,
                 outcomes: Sequence[int], role: str = "") -> list[FittedEnsemble]:
    """Run the full super learner for each outcome on ``work_idx`` (shared folds).

    Every learner is refitted on the whole working set so that the number
    of fits does not depend on the data; learners with weight below
    ``DROP_THRESHOLD`` are left out of the ensemble.
    """
    work_idx = np.sort(np.asarray(work_idx, dtype=np.int64))
    tables = _oof_tables(sched, work_idx, folds, outcomes, role + "-cv")
    refits = sched.fit_all(work_idx, outcomes, role + "-refit")
    out = []
    for j, table in zip(outcomes, tables):
        beta = _prune(solve_beta(table))
        members = tuple((m, refits[j, m]) for m in range(sched.M) if beta.w[m] > 0)
        out.append(FittedEnsemble(beta, members, j, table))
    return out


def fit_super_learner(specs, data: Dataset, j: int, K_star: int, work_idx=None, seed: int = 0,
                      scheduler: FitScheduler | None = None,
                      folds: FoldAssignment | None = None) -> FittedEnsemble:
    """Super learner for outcome ``j`` fitted on ``work_idx`` with ``K_star``-fold CV."""
    work_idx = np.arange(data.n) if work_idx is None else np.sort(np.asarray(work_idx, dtype=np.int64))
    if work_idx.size < 2 * K_star:
        raise BadFoldCount(f"working set of {work_idx.size} rows is too small for K*={K_star}")
    sched = scheduler or FitScheduler(specs, data, seed)
    if folds is None:
        folds = make_folds(work_idx.size, K_star, derive_seed(seed, 0))
    return ensembles_on(sched, work_idx, folds, [j], "sl")[0]


def plan_fits(K: int, M_total: int, reuse: bool, K_circ: int | None = None,
              K_star: int | None = None, innermost_only: bool = False,
              lattice: bool = False) -> int:
    """Number of candidate-learner fits the three-layer pipeline performs.

    Without reuse, with ``K_circ``/``K_star`` defaulting to ``K``, each outer
    fold runs one super learner (``K_star`` CV fits plus one refit per
    learner) and ``K_circ`` nested super learners, giving
    ``K (K_circ + 1)(K_star + 1)`` fits per learner and outcome; the
    innermost cross-validation layer alone accounts for ``K K_circ K_star``
    (``K**3`` when the fold counts agree).

    With fold-lattice reuse (``K_circ = K - 1``, ``K_star = K - 2``) every
    distinct training set is the complement of one, two or three of the K
    outer folds, so ``C(K,1) + C(K,2) + C(K,3) = (K**3 + 5K)/6`` fits per
    learner and outcome are needed; ``innermost_only`` counts the C(K,3)
    three-fold complements. ``lattice=True`` without reuse counts the same
    lattice-driven folds fitted without the cache.
    """
    if reuse:
        if K < 3:
            raise BadFoldCount("fold-lattice reuse needs K >= 3")
        if innermost_only:
            return K * (K - 1) * (K - 2) // 6 * M_total
        return (K**3 + 5 * K) // 6 * M_total
    if K < 2:
        raise BadFoldCount("K must be at least 2")
    if lattice:
        if K < 3:
            raise BadFoldCount("fold lattice needs K >= 3")
        if innermost_only:
            return K * (K - 1) * (K - 2) * M_total
        return K * (K + (K - 1) ** 2) * M_total
    Kc = K if K_circ is None else K_circ
    Ks = K if K_star is None else K_star
    if innermost_only:
        return K * Kc * Ks * M_total
    return K * (Kc + 1) * (Ks + 1) * M_total
