import numpy as np
import pytest

from mvassoc.data import Dataset, SimplexWeights, make_folds
from mvassoc.errors import DegenerateNull
from mvassoc.learners import library
from mvassoc.superlearner import FitScheduler, ensembles_on
from mvassoc.weights import CompositeObjective, OmegaOptions, composite_cv_r2, optimize_objective, optimize_omega

from oracles import grid_omega_objective, random_composite


def _fold_fits(data, folds, names=("mean", "ols")):
    sched = FitScheduler(library(*names), data)
    out = []
    for k in range(folds.K):
        tr = folds.training(k)
        out.append(ensembles_on(sched, tr, make_folds(tr.size, 3, k), range(data.J), "t"))
    return out


def test_omega_grid_oracle_J2():
    rng = np.random.default_rng(7)
    for _ in range(20):
        obj = random_composite(rng)
        res = optimize_objective(obj)
        assert abs(res.r2_at_omega - grid_omega_objective(obj)) <= 1e-3
        assert res.r2_at_omega >= grid_omega_objective(obj) - 1e-9


def test_gradient_matches_finite_differences(rng):
    obj = random_composite(rng, J=4)
    w = rng.dirichlet(np.ones(4))
    g = obj.gradient(w)
    h = 1e-6
    fd = np.array([(obj.value(w + h * e) - obj.value(w - h * e)) / (2 * h) for e in np.eye(4)])
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


def test_monotone_over_starts(rng):
    obj = random_composite(rng, J=5)
    res = optimize_objective(obj, OmegaOptions(extra_starts=3, seed=1))
    assert res.r2_at_omega >= max(res.starts) - 1e-12
    assert len(res.starts) == 1 + 5 + 3


def test_permutation_invariance(rng):
    obj = random_composite(rng, n=80, J=3)
    perm = np.array([2, 0, 1])
    Pm = CompositeObjective.__new__(CompositeObjective)
    Pm.J = 3
    Pm.model = obj.model[np.ix_(perm, perm)]
    Pm.null = obj.null[np.ix_(perm, perm)]
    a = optimize_objective(obj)
    b = optimize_objective(Pm)
    assert a.r2_at_omega == pytest.approx(b.r2_at_omega, abs=1e-8)
    np.testing.assert_allclose(a.omega.w[perm], b.omega.w, atol=1e-4)


def test_J1_reduces_to_univariate(rng):
    X = rng.normal(size=(60, 2))
    y = X[:, 0] + rng.normal(size=60)
    d = Dataset(X, y[:, None])
    folds = make_folds(60, 3, 0)
    ff = _fold_fits(d, folds)
    res = optimize_omega(ff, d, folds)
    assert res.omega.w.tolist() == [1.0]
    r2 = composite_cv_r2(SimplexWeights([1.0]), ff, d, folds)
    assert res.r2_at_omega == pytest.approx(r2, abs=1e-12)
    oof = np.empty(60)
    for k in range(3):
        v = folds.validation(k)
        oof[v] = ff[k][0].predict(X[v])
    mse = np.mean([np.mean((y[folds.validation(k)] - oof[folds.validation(k)]) ** 2) for k in range(3)])
    assert r2 == pytest.approx(1 - mse / np.var(y), abs=1e-12)


def test_intercept_only_cannot_beat_mean(rng):
    d = Dataset(rng.normal(size=(60, 2)), rng.normal(size=(60, 3)))
    folds = make_folds(60, 4, 0)
    ff = _fold_fits(d, folds, ("mean",))
    for w in ([1, 0, 0], [0.2, 0.3, 0.5]):
        assert composite_cv_r2(w, ff, d, folds) <= 0


def test_objective_matches_direct_route(rng):
    X = rng.normal(size=(90, 3))
    Y = np.column_stack([X[:, 0] + rng.normal(size=90), X[:, 1] ** 2 + rng.normal(size=90)])
    d = Dataset(X, Y)
    folds = make_folds(90, 3, 4)
    ff = _fold_fits(d, folds)
    res = optimize_omega(ff, d, folds)
    assert res.r2_at_omega == pytest.approx(composite_cv_r2(res.omega, ff, d, folds), abs=1e-12)


def test_degenerate_null():
    folds = make_folds(10, 2, 0)
    Y = np.ones((10, 2))
    obj = CompositeObjective(Y, Y, folds)
    with pytest.raises(DegenerateNull):
        obj.value([0.5, 0.5])
