"""Observed-data container, fold construction and R² arithmetic."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BadFoldCount, ConstantOutcome, DataError, DegenerateNull

SIMPLEX_TOL = 1e-8


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """n observations of D covariates and J outcomes.

    ``standardization`` holds one ``(mean, sd)`` pair per outcome once
    :func:`standardize_outcomes` has been applied, otherwise it is empty.
    """

    covariates: np.ndarray
    outcomes: np.ndarray
    covariate_names: tuple[str, ...] = ()
    outcome_names: tuple[str, ...] = ()
    standardization: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=float)
        Y = np.asarray(self.outcomes, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.ndim != 2 or Y.ndim != 2:
            raise DataError("covariates and outcomes must be 2-d")
        if X.shape[0] != Y.shape[0]:
            raise DataError(f"row mismatch: {X.shape[0]} covariate rows vs {Y.shape[0]} outcome rows")
        n, D = X.shape
        J = Y.shape[1]
        if n < 2 or D < 1 or J < 1:
            raise DataError(f"need n >= 2, D >= 1, J >= 1 (got n={n}, D={D}, J={J})")
        if not (np.isfinite(X).all() and np.isfinite(Y).all()):
            raise DataError("non-finite values in data")
        cov_names = tuple(self.covariate_names) or tuple(f"X{d + 1}" for d in range(D))
        out_names = tuple(self.outcome_names) or tuple(f"Y{j + 1}" for j in range(J))
        if len(cov_names) != D or len(out_names) != J:
            raise DataError("name count does not match column count")
        object.__setattr__(self, "covariates", _frozen(X))
        object.__setattr__(self, "outcomes", _frozen(Y))
        object.__setattr__(self, "covariate_names", cov_names)
        object.__setattr__(self, "outcome_names", out_names)
        object.__setattr__(
            self, "standardization", tuple((float(m), float(s)) for m, s in self.standardization)
        )

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def D(self) -> int:
        return self.covariates.shape[1]

    @property
    def J(self) -> int:
        return self.outcomes.shape[1]

    def drop_covariates(self, columns: Sequence[int]) -> "Dataset":
        """Copy of the dataset without the given covariate columns."""
        drop = set(int(c) for c in columns)
        keep = [d for d in range(self.D) if d not in drop]
        return replace(
            self,
            covariates=self.covariates[:, keep],
            covariate_names=tuple(self.covariate_names[d] for d in keep),
        )

    def with_covariates(self, X: np.ndarray, names: Sequence[str] | None = None) -> "Dataset":
        return replace(self, covariates=X, covariate_names=tuple(names) if names else ())


def standardize_outcomes(data: Dataset) -> Dataset:
    """Center and scale every outcome by its full-sample mean and sd (ddof=1)."""
    Y = data.outcomes
    mean = Y.mean(axis=0)
    sd = Y.std(axis=0, ddof=1)
    for j in range(data.J):
        # relative guard: a column of identical floats can have sd ~ 1e-16
        if not sd[j] > 1e-12 * max(1.0, abs(mean[j])):
            raise ConstantOutcome(f"outcome {data.outcome_names[j]!r} has zero variance")
    Z = (Y - mean) / sd
    return replace(data, outcomes=Z, standardization=tuple(zip(mean.tolist(), sd.tolist())))


def destandardize_outcomes(data: Dataset) -> np.ndarray:
    """Inverse of :func:`standardize_outcomes`, using the stored metadata."""
    if not data.standardization:
        return np.array(data.outcomes)
    mean = np.array([m for m, _ in data.standardization])
    sd = np.array([s for _, s in data.standardization])
    return data.outcomes * sd + mean


@dataclass(frozen=True)
class FoldAssignment:
    """Partition of ``n`` positions into ``K`` validation folds.

    ``fold_of[i]`` is the 0-based fold label of position ``i``.
    """

    n: int
    K: int
    fold_of: np.ndarray = field(repr=False)

    def __post_init__(self):
        f = np.asarray(self.fold_of, dtype=np.int64).copy()
        f.setflags(write=False)
        object.__setattr__(self, "fold_of", f)
        if f.shape != (self.n,):
            raise BadFoldCount("fold_of must have length n")
        if self.K < 1 or f.min(initial=0) < 0 or (self.n and f.max() >= self.K):
            raise BadFoldCount("fold labels out of range")

    def validation(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == k)

    def training(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.K)

    def __iter__(self):
        for k in range(self.K):
            yield self.training(k), self.validation(k)


def make_folds(n: int, K: int, seed) -> FoldAssignment:
    """Random partition into ``K`` folds of size ``floor(n/K)`` or ``ceil(n/K)``.

    Shuffles positions with a seeded Fisher-Yates permutation, then cuts the
    permutation into contiguous chunks.
    """
    if K < 2 or K > n:
        raise BadFoldCount(f"fold count K={K} must satisfy 2 <= K <= n={n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    for k, chunk in enumerate(np.array_split(perm, K)):
        fold_of[chunk] = k
    return FoldAssignment(n, K, fold_of)


def folds_from_labels(labels: Sequence[int]) -> FoldAssignment:
    """Build a fold assignment from arbitrary integer labels (relabelled densely)."""
    labels = np.asarray(labels)
    uniq, dense = np.unique(labels, return_inverse=True)
    return FoldAssignment(len(labels), len(uniq), dense)


@dataclass(frozen=True)
class SimplexWeights:
    w: np.ndarray

    def __post_init__(self):
        w = _frozen(self.w).ravel()
        if w.size == 0 or (w < -SIMPLEX_TOL).any() or abs(w.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"not a simplex point: {w}")
        object.__setattr__(self, "w", w)

    def __len__(self):
        return self.w.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.w, dtype=dtype)

    def tolist(self):
        return self.w.tolist()

    @classmethod
    def uniform(cls, m: int) -> "SimplexWeights":
        return cls(np.full(m, 1.0 / m))


@dataclass(frozen=True)
class MsePair:
    mse_model: float
    mse_null: float

    def __post_init__(self):
        if self.mse_model < 0 or self.mse_null < 0:
            raise ValueError("MSEs must be non-negative")


def nonparametric_r2(p: MsePair) -> float:
    """Proportional reduction in MSE relative to the marginal-mean predictor."""
    if not p.mse_null > 0:
        raise DegenerateNull(f"null MSE must be positive (got {p.mse_null})")
    return 1.0 - p.mse_model / p.mse_null


# --- CSV ingestion -----------------------------------------------------------

def _parse_cell(text: str) -> float:
    text = text.strip()
    if text == "" or text.upper() in ("NA", "NAN"):
        return math.nan
    # float() is locale independent; reject decimal commas explicitly
    if "," in text:
        raise DataError(f"cannot parse {text!r}: only '.' is accepted as decimal point")
    try:
        return float(text)
    except ValueError:
        raise DataError(f"cannot parse {text!r} as a number") from None


def read_csv(
    path: str | Path,
    outcomes: Sequence[str],
    covariates: Sequence[str] | None = None,
) -> Dataset:
    """Load a headered CSV into a :class:`Dataset`.

    Columns in ``covariates`` (default: every non-outcome column) with missing
    cells get a companion ``<name>_missing`` 0/1 indicator and the missing
    cells are set to 0. A missing outcome value is an error.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    index = {h: i for i, h in enumerate(header)}
    outcomes = list(outcomes)
    if covariates is None:
        covariates = [h for h in header if h not in outcomes]
    covariates = list(covariates)
    for name in outcomes + covariates:
        if name not in index:
            raise DataError(f"{path}: column {name!r} not found in header")
    if set(outcomes) & set(covariates):
        raise DataError(f"columns listed as both outcome and covariate: {sorted(set(outcomes) & set(covariates))}")
    if not outcomes or not covariates:
        raise DataError("need at least one outcome and one covariate")
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    for lineno, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(r)}")

    def column(name):
        i = index[name]
        return np.array([_parse_cell(r[i]) for r in body])

    Y = np.column_stack([column(c) for c in outcomes]) if body else np.empty((0, len(outcomes)))
    if np.isnan(Y).any():
        bad = [outcomes[j] for j in np.flatnonzero(np.isnan(Y).any(axis=0))]
        raise DataError(f"missing outcome values in {bad}")
    cols, names, indicators = [], [], []
    for c in covariates:
        x = column(c)
        miss = np.isnan(x)
        cols.append(np.where(miss, 0.0, x))
        names.append(c)
        if miss.any():
            indicators.append((f"{c}_missing", miss.astype(float)))
    for name, ind in indicators:
        cols.append(ind)
        names.append(name)
    X = np.column_stack(cols)
    return Dataset(X, Y, tuple(names), tuple(outcomes))


def write_csv(path: str | Path, data: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(data.covariate_names) + list(data.outcome_names))
        for x, y in zip(data.covariates, data.outcomes):
            w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y])
