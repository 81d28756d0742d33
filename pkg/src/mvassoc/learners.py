"""Candidate learners: each maps training rows to a univariate prediction function."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from . import kernels
from .data import Dataset
from .errors import DimensionMismatch, InvalidHyperparameter, SingularFit

RIDGE_FALLBACK = 1e-8
COND_LIMIT = 1e12


def index_digest(idx) -> str:
    """Short stable digest of an index set (order-insensitive)."""
    a = np.sort(np.asarray(idx, dtype=np.int64))
    return hashlib.blake2b(a.tobytes(), digest_size=8).hexdigest()


# --- predictors --------------------------------------------------------------

class Predictor:
    """A fitted prediction function ``x -> real``.

    ``kind`` and ``digest`` record which learner produced it and on which
    training rows.
    """

    kind: str = ""
    digest: str = ""
    n_features: int = 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionMismatch(
                f"expected rows of length {self.n_features}, got shape {X.shape}"
            )
        return self._predict(X)

    def _predict(self, X):  # pragma: no cover - abstract
        raise NotImplementedError


class ConstantPredictor(Predictor):
    def __init__(self, value: float, n_features: int):
        self.value = float(value)
        self.n_features = n_features

    def _predict(self, X):
        return np.full(X.shape[0], self.value)


class LinearPredictor(Predictor):
    def __init__(self, intercept: float, coef: np.ndarray):
        self.intercept = float(intercept)
        self.coef = np.asarray(coef, dtype=float)
        self.n_features = self.coef.size

    def _predict(self, X):
        return self.intercept + X @ self.coef


class SplinePredictor(Predictor):
    def __init__(self, knots: list, df: int, intercept: float, coef: np.ndarray, n_features: int):
        self.knots = knots
        self.df = df
        self.intercept = float(intercept)
        self.coef = coef
        self.n_features = n_features

    def _predict(self, X):
        return self.intercept + _spline_design(X, self.knots, self.df) @ self.coef


class ModelPredictor(Predictor):
    """Wraps any object with an sklearn-style ``predict``."""

    def __init__(self, model, n_features: int):
        self.model = model
        self.n_features = n_features

    def _predict(self, X):
        return np.asarray(self.model.predict(X), dtype=float)


def predict(p: Predictor, x) -> float | np.ndarray:
    """Evaluate ``p`` at one D-vector (returns a float) or at rows of a matrix."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.size != p.n_features:
            raise DimensionMismatch(f"expected a vector of length {p.n_features}, got {x.size}")
        return float(p.predict(x[None, :])[0])
    return p.predict(x)


# --- least squares helpers ----------------------------------------------------

def solve_gram(G: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Solve ``G b = c`` for a centered Gram matrix, ridging if ill-conditioned."""
    d = np.diag(G)
    if d.size == 0:
        return np.zeros(0)
    s = np.sqrt(np.where(d > 0, d, 1.0))
    S = G / np.outer(s, s)
    ok = bool((d > 0).all())
    if ok:
        ev = np.linalg.eigvalsh(S)
        ok = ev[0] > ev[-1] / COND_LIMIT
    if ok:
        b = np.linalg.solve(G, c)
    else:
        b = np.linalg.solve(G + RIDGE_FALLBACK * np.eye(d.size), c)
    if not np.isfinite(b).all():
        raise SingularFit("least-squares design is singular even after ridge fallback")
    return b


def _centered_fit(Z: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    zm = Z.mean(axis=0)
    ym = y.mean()
    Zc = Z - zm
    b = solve_gram(Zc.T @ Zc, Zc.T @ (y - ym))
    return ym - zm @ b, b


# --- cubic regression splines ---------------------------------------------------

def _spline_knots(x: np.ndarray, df: int):
    """Boundary and interior knots for one column, or None for a linear term.

    A cubic spline with ``df`` degrees of freedom uses ``df - 3`` interior
    knots at training quantiles (a plain polynomial of degree ``df`` when
    ``df < 3``).
    """
    u = np.unique(x)
    if u.size <= 2:
        return None
    n_inner = max(df - 3, 0)
    probs = np.linspace(0.0, 1.0, n_inner + 2)
    knots = np.quantile(x, probs)
    inner = np.unique(knots[1:-1])
    return np.concatenate([[knots[0]], inner, [knots[-1]]])


def _cubic_basis(x: np.ndarray, knots: np.ndarray, df: int) -> np.ndarray:
    lo, hi = knots[0], knots[-1]
    # clamp: no polynomial extrapolation outside the training range
    t = (np.clip(x, lo, hi) - lo) / (hi - lo)
    degree = min(df, 3)
    cols = [t ** p for p in range(1, degree + 1)]
    for k in (knots[1:-1] - lo) / (hi - lo):
        cols.append(np.maximum(t - k, 0.0) ** 3)
    return np.column_stack(cols)


def _spline_design(X: np.ndarray, knots: list, df: int) -> np.ndarray:
    blocks = []
    for j, kn in enumerate(knots):
        if kn is None:
            blocks.append(X[:, j : j + 1])
        else:
            blocks.append(_cubic_basis(X[:, j], kn, df))
    return np.hstack(blocks)


# --- learner implementations ----------------------------------------------------

def _fit_intercept(X, y, hp, seed):
    return ConstantPredictor(y.mean(), X.shape[1])


def _fit_ols(X, y, hp, seed):
    a, b = _centered_fit(X, y)
    return LinearPredictor(a, b)


def _fit_stepwise(X, y, hp, seed):
    n = X.shape[0]
    xm = X.mean(axis=0)
    ym = y.mean()
    Xc = X - xm
    yc = y - ym
    selected, coef = kernels.forward_stepwise(
        Xc.T @ Xc, Xc.T @ yc, float(yc @ yc), float(n), float(hp["penalty"])
    )
    return LinearPredictor(ym - xm @ coef, coef)


def _fit_spline(X, y, hp, seed):
    df = int(hp["df"])
    knots = [_spline_knots(X[:, j], df) for j in range(X.shape[1])]
    Z = _spline_design(X, knots, df)
    a, b = _centered_fit(Z, y)
    return SplinePredictor(knots, df, a, b, X.shape[1])


def _maybe_tuned(estimator, hp, seed):
    grid = hp.get("cv_grid")
    if not grid:
        return estimator
    from sklearn.model_selection import GridSearchCV, KFold

    return GridSearchCV(
        estimator,
        grid,
        cv=KFold(n_splits=int(hp.get("cv_folds", 5)), shuffle=True, random_state=seed),
        scoring="neg_mean_squared_error",
    )


def _sk_seed(seed) -> int:
    return int(seed) % (2**32)


def _fit_forest(X, y, hp, seed):
    from sklearn.ensemble import RandomForestRegressor

    model = RandomForestRegressor(
        n_estimators=int(hp["n_estimators"]),
        max_depth=hp["max_depth"],
        min_samples_leaf=int(hp["min_samples_leaf"]),
        max_features=hp["max_features"],
        random_state=_sk_seed(seed),
        n_jobs=1,
    )
    model = _maybe_tuned(model, hp, _sk_seed(seed))
    model.fit(X, y)
    return ModelPredictor(model, X.shape[1])


def _fit_boosted(X, y, hp, seed):
    from sklearn.ensemble import GradientBoostingRegressor

    model = GradientBoostingRegressor(
        n_estimators=int(hp["n_estimators"]),
        max_depth=int(hp["max_depth"]),
        learning_rate=float(hp["learning_rate"]),
        subsample=float(hp["subsample"]),
        random_state=_sk_seed(seed),
    )
    model = _maybe_tuned(model, hp, _sk_seed(seed))
    model.fit(X, y)
    return ModelPredictor(model, X.shape[1])


def _fit_enet(X, y, hp, seed):
    from sklearn.linear_model import ElasticNet
    from sklearn.pipeline import make_pipeline
    from sklearn.preprocessing import StandardScaler

    model = make_pipeline(
        StandardScaler(),
        ElasticNet(alpha=float(hp["alpha"]), l1_ratio=float(hp["l1_ratio"]), max_iter=10000),
    )
    grid = hp.get("cv_grid")
    if grid:
        hp = dict(hp, cv_grid={f"elasticnet__{k}": v for k, v in grid.items()})
    model = _maybe_tuned(model, hp, _sk_seed(seed))
    model.fit(X, y)
    return ModelPredictor(model, X.shape[1])


@dataclass(frozen=True)
class _Kind:
    fit: Callable
    defaults: Mapping[str, Any]
    checks: Mapping[str, Callable[[Any], bool]] = field(default_factory=dict)
    stochastic: bool = False
    tunable: tuple[str, ...] = ()


def _pos_int(v):
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool) and v > 0


def _pos_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0


def _unit(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and 0 < v <= 1


def _depth(v):
    return v is None or _pos_int(v)


def _max_features(v):
    return v in ("sqrt", "log2", None) or _unit(v)


_GRID_CHECKS = {"cv_grid": lambda v: v is None or isinstance(v, dict), "cv_folds": lambda v: _pos_int(v) and v >= 2}

KINDS: dict[str, _Kind] = {
    "intercept-only": _Kind(_fit_intercept, {}),
    "ols-main-terms": _Kind(_fit_ols, {}),
    "forward-stepwise": _Kind(_fit_stepwise, {"penalty": 2.0}, {"penalty": _pos_num}),
    "spline-additive": _Kind(_fit_spline, {"df": 4}, {"df": _pos_int}),
    "tree-ensemble": _Kind(
        _fit_forest,
        {"n_estimators": 200, "max_depth": None, "min_samples_leaf": 5, "max_features": 1.0,
         "cv_grid": None, "cv_folds": 5},
        {"n_estimators": _pos_int, "max_depth": _depth, "min_samples_leaf": _pos_int,
         "max_features": _max_features, **_GRID_CHECKS},
        stochastic=True,
        tunable=("n_estimators", "max_depth", "min_samples_leaf", "max_features"),
    ),
    "boosted-trees": _Kind(
        _fit_boosted,
        {"n_estimators": 200, "max_depth": 3, "learning_rate": 0.05, "subsample": 1.0,
         "cv_grid": None, "cv_folds": 5},
        {"n_estimators": _pos_int, "max_depth": _pos_int, "learning_rate": _pos_num,
         "subsample": _unit, **_GRID_CHECKS},
        stochastic=True,
        tunable=("n_estimators", "max_depth", "learning_rate", "subsample"),
    ),
    "elastic-net": _Kind(
        _fit_enet,
        {"alpha": 0.1, "l1_ratio": 0.5, "cv_grid": None, "cv_folds": 5},
        {"alpha": _pos_num, "l1_ratio": _unit, **_GRID_CHECKS},
        tunable=("alpha", "l1_ratio"),
    ),
}

# short names used by the simulation libraries
ALIASES = {"mean": "intercept-only", "ols": "ols-main-terms", "glm": "ols-main-terms",
           "stepwise": "forward-stepwise", "step": "forward-stepwise", "gam": "spline-additive",
           "spline": "spline-additive", "rf": "tree-ensemble", "gbm": "boosted-trees",
           "enet": "elastic-net", "glmnet": "elastic-net"}


@dataclass(frozen=True)
class LearnerSpec:
    """A learner kind plus validated hyperparameters (defaults filled in)."""

    kind: str
    hyperparameters: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        kind = ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise InvalidHyperparameter(
                f"unknown learner kind {self.kind!r}; valid kinds: {sorted(KINDS)}"
            )
        k = KINDS[kind]
        hp = dict(self.hyperparameters or {})
        unknown = set(hp) - set(k.defaults)
        if unknown:
            raise InvalidHyperparameter(f"{kind}: unknown hyperparameter(s) {sorted(unknown)}")
        for key, value in hp.items():
            check = k.checks.get(key)
            if check is not None and not check(value):
                raise InvalidHyperparameter(f"{kind}: invalid value {value!r} for {key!r}")
        grid = hp.get("cv_grid")
        if grid:
            bad = set(grid) - set(k.tunable)
            if bad:
                raise InvalidHyperparameter(f"{kind}: cannot tune {sorted(bad)}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "hyperparameters", {**k.defaults, **hp})

    @property
    def label(self) -> str:
        extra = {k: v for k, v in self.hyperparameters.items() if KINDS[self.kind].defaults.get(k) != v}
        if not extra:
            return self.kind
        return self.kind + "(" + ",".join(f"{k}={v}" for k, v in sorted(extra.items())) + ")"

    @property
    def stochastic(self) -> bool:
        return KINDS[self.kind].stochastic

    def to_dict(self) -> dict:
        return {"kind": self.kind, "hyperparameters": dict(self.hyperparameters)}

    @classmethod
    def coerce(cls, obj) -> "LearnerSpec":
        if isinstance(obj, LearnerSpec):
            return obj
        if isinstance(obj, str):
            return cls(obj)
        if isinstance(obj, Mapping):
            extra = set(obj) - {"kind", "hyperparameters"}
            if "kind" not in obj or extra:
                raise InvalidHyperparameter(f"learner entry must have 'kind' (and optional 'hyperparameters'): {obj!r}")
            return cls(obj["kind"], obj.get("hyperparameters") or {})
        raise InvalidHyperparameter(f"cannot interpret learner entry {obj!r}")


def library(*names) -> list[LearnerSpec]:
    return [LearnerSpec.coerce(n) for n in names]


def fit_arrays(spec: LearnerSpec, X: np.ndarray, y: np.ndarray, seed=0, digest: str = "") -> Predictor:
    """Fit ``spec`` on explicit training arrays."""
    p = KINDS[spec.kind].fit(X, y, spec.hyperparameters, seed)
    p.kind = spec.kind
    p.digest = digest
    return p


def fit_learner(spec: LearnerSpec, data: Dataset, outcome_index: int, train_idx, seed=0) -> Predictor:
    """Fit one candidate learner for outcome ``outcome_index`` (0-based) on ``train_idx`` only."""
    idx = np.sort(np.asarray(train_idx, dtype=np.int64))
    if idx.size == 0:
        raise ValueError("empty training set")
    if not 0 <= outcome_index < data.J:
        raise IndexError(f"outcome index {outcome_index} out of range for J={data.J}")
    X = data.covariates[idx]
    y = data.outcomes[idx, outcome_index]
    return fit_arrays(spec, X, y, seed, index_digest(idx))
