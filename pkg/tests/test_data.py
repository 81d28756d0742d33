import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvassoc.data import (
    Dataset, FoldAssignment, MsePair, SimplexWeights, destandardize_outcomes, folds_from_labels,
    make_folds, nonparametric_r2, read_csv, standardize_outcomes, write_csv,
)
from mvassoc.errors import BadFoldCount, ConstantOutcome, DataError, DegenerateNull


def _ds(Y, X=None):
    Y = np.asarray(Y, dtype=float)
    n = Y.shape[0]
    X = np.arange(n, dtype=float)[:, None] if X is None else X
    return Dataset(X, Y)


def test_standardize_simple_column():
    d = standardize_outcomes(_ds([[1.0], [2.0], [3.0]]))
    np.testing.assert_allclose(d.outcomes[:, 0], [-1, 0, 1])
    assert d.standardization == ((2.0, 1.0),)


def test_standardize_idempotent():
    d = standardize_outcomes(_ds([[1.0], [2.0], [3.0]]))
    d2 = standardize_outcomes(d)
    np.testing.assert_allclose(d2.outcomes, d.outcomes, atol=1e-15)
    m, s = d2.standardization[0]
    assert abs(m) < 1e-12 and abs(s - 1) < 1e-12


def test_standardize_constant_column():
    with pytest.raises(ConstantOutcome):
        standardize_outcomes(_ds([[5.0], [5.0], [5.0]]))


def test_standardize_roundtrip_and_moments(rng):
    Y = rng.normal(3, 7, size=(50, 4))
    d = standardize_outcomes(_ds(Y))
    assert np.abs(d.outcomes.mean(axis=0)).max() < 1e-10
    assert np.abs(d.outcomes.std(axis=0, ddof=1) - 1).max() < 1e-10
    np.testing.assert_allclose(destandardize_outcomes(d), Y, atol=1e-10)


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.ones((1, 1)), np.ones((1, 1)))
    with pytest.raises(DataError):
        Dataset(np.ones((3, 1)), np.ones((2, 1)))
    with pytest.raises(DataError):
        Dataset(np.array([[1.0], [np.nan]]), np.ones((2, 1)))
    d = Dataset(np.ones((3, 2)), np.ones((3, 1)))
    assert d.covariate_names == ("X1", "X2") and d.outcome_names == ("Y1",)
    with pytest.raises(ValueError):
        d.covariates[0, 0] = 3.0  # read-only


@pytest.mark.parametrize("n,K,sizes", [(10, 2, [5, 5]), (7, 3, [2, 2, 3]), (5, 5, [1] * 5)])
def test_make_folds_examples(n, K, sizes):
    f = make_folds(n, K, 0)
    assert sorted(f.sizes().tolist()) == sizes


@pytest.mark.parametrize("K", [1, 11])
def test_make_folds_bad_count(K):
    with pytest.raises(BadFoldCount):
        make_folds(10, K, 0)


@given(n=st.integers(2, 200), K=st.integers(2, 20), seed=st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_folds_partition(n, K, seed):
    if K > n:
        return
    f = make_folds(n, K, seed)
    sizes = f.sizes()
    assert sizes.sum() == n and sizes.max() - sizes.min() <= 1 and (sizes > 0).all()
    allv = np.concatenate([f.validation(k) for k in range(K)])
    assert np.array_equal(np.sort(allv), np.arange(n))
    for k in range(K):
        assert np.intersect1d(f.training(k), f.validation(k)).size == 0
        assert f.training(k).size + f.validation(k).size == n
    assert np.array_equal(make_folds(n, K, seed).fold_of, f.fold_of)


def test_folds_from_labels_relabels():
    f = folds_from_labels([4, 4, 7, 9, 7])
    assert f.K == 3 and f.fold_of.tolist() == [0, 0, 1, 2, 1]


def test_simplex_weights():
    SimplexWeights([0.2, 0.8])
    with pytest.raises(ValueError):
        SimplexWeights([0.5, 0.6])
    with pytest.raises(ValueError):
        SimplexWeights([-0.1, 1.1])
    np.testing.assert_allclose(SimplexWeights.uniform(4).w, 0.25)


@pytest.mark.parametrize("m,v,r", [(0, 4, 1.0), (4, 4, 0.0), (6, 4, -0.5)])
def test_nonparametric_r2(m, v, r):
    assert nonparametric_r2(MsePair(m, v)) == pytest.approx(r)


def test_nonparametric_r2_degenerate():
    with pytest.raises(DegenerateNull):
        nonparametric_r2(MsePair(1.0, 0.0))


@given(a=st.floats(0, 100), b=st.floats(0.01, 100), c=st.floats(0.01, 100))
def test_r2_scale_invariant(a, b, c):
    assert nonparametric_r2(MsePair(a, b)) == pytest.approx(nonparametric_r2(MsePair(a * c, b * c)), rel=1e-9, abs=1e-12)


def test_csv_roundtrip(tmp_path, rng):
    d = Dataset(rng.normal(size=(6, 2)), rng.normal(size=(6, 2)), ("a", "b"), ("y", "z"))
    p = tmp_path / "d.csv"
    write_csv(p, d)
    back = read_csv(p, ["y", "z"])
    np.testing.assert_array_equal(back.covariates, d.covariates)
    np.testing.assert_array_equal(back.outcomes, d.outcomes)
    assert back.covariate_names == ("a", "b")


def test_csv_missing_covariate_indicator(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("y,a,b\n1.5,,2\n2.5,3,NA\n3.5,4,5\n")
    d = read_csv(p, ["y"])
    assert d.covariate_names == ("a", "b", "a_missing", "b_missing")
    np.testing.assert_array_equal(d.covariates, [[0, 2, 1, 0], [3, 0, 0, 1], [4, 5, 0, 0]])


def test_csv_errors(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("y,a\n,1\n2,3\n")
    with pytest.raises(DataError, match="missing outcome"):
        read_csv(p, ["y"])
    p.write_text("y,a\n1,2\n3\n")
    with pytest.raises(DataError):
        read_csv(p, ["y"])
    p.write_text("y,a\n1,\"2,5\"\n3,4\n")
    with pytest.raises(DataError):
        read_csv(p, ["y"])
    p.write_text("y,a\n1,2\n3,4\n")
    with pytest.raises(DataError, match="both"):
        read_csv(p, ["y"], ["y", "a"])
    with pytest.raises(DataError, match="not found"):
        read_csv(p, ["q"])
