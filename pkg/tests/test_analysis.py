from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats
from sklearn.metrics import matthews_corrcoef, silhouette_score

from armada import analysis as A
from armada.errors import DataError, NumericError, ParameterError

# ---------------------------------------------------------------------------
# scalar metrics


def test_accuracy():
    assert A.accuracy([0, 1, 1, 0], [0, 1, 0, 0]) == 0.75
    with pytest.raises(DataError):
        A.accuracy([], [])


def test_mcc_examples():
    assert A.mcc([0, 1, 0, 1], [0, 1, 0, 1]) == 1.0
    assert A.mcc([1, 0, 1, 0], [0, 1, 0, 1]) == -1.0
    # TP=2, TN=2, FP=1, FN=1
    assert A.mcc([1, 1, 1, 0, 0, 0], [1, 1, 0, 0, 0, 1]) == pytest.approx(3 / 9, abs=1e-12)
    assert A.mcc([1, 1, 1], [0, 1, 0]) == 0.0
    with pytest.raises(DataError):
        A.mcc([0, 2], [0, 1])


def _sk_mcc(y, p):
    if len(set(y) | set(p)) < 2:
        return 0.0
    return matthews_corrcoef(y, p)


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=2, max_size=60))
def test_mcc_matches_sklearn(pairs):
    p, y = (np.array(v) for v in zip(*pairs))
    assert A.mcc(p, y) == pytest.approx(_sk_mcc(y, p), abs=1e-12)


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=40))
def test_mcc_and_purity_relabel_invariant(pairs):
    p, y = (np.array(v) for v in zip(*pairs))
    assert A.mcc(1 - p, 1 - y) == pytest.approx(A.mcc(p, y), abs=1e-12)
    assert A.cluster_purity(1 - p, 1 - y) == A.cluster_purity(p, y)


@given(st.lists(st.integers(0, 4), min_size=1, max_size=40))
def test_single_cluster_purity_is_largest_share(labels):
    y = np.array(labels)
    assert A.cluster_purity(np.zeros_like(y), y) >= np.bincount(y).max() / y.size


def test_pearson_examples():
    assert A.pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert A.pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert A.pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)
    assert A.pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(0.98198, abs=1e-5)
    with pytest.raises(NumericError):
        A.pearson([1, 1, 1], [1, 2, 3])


@given(st.integers(3, 50), st.integers(0, 2**32 - 1))
def test_pearson_and_spearman_match_scipy(n, seed):
    r = np.random.default_rng(seed)
    x, y = r.normal(size=n), r.normal(size=n)
    y[: n // 3] = np.round(y[: n // 3])
    assert A.pearson(x, y) == pytest.approx(stats.pearsonr(x, y)[0], abs=1e-10)
    x = np.round(x)
    if np.ptp(x) > 0:
        assert A.spearman(x, y) == pytest.approx(stats.spearmanr(x, y)[0], abs=1e-10)


# ---------------------------------------------------------------------------
# clustering


def _blobs(seed=0, n=40):
    r = np.random.default_rng(seed)
    a = r.normal(size=(n, 2)) * 0.1 + [5, 5]
    b = r.normal(size=(n, 2)) * 0.1 - [5, 5]
    return np.vstack([a, b]), np.repeat([0, 1], n)


def test_kmeans_separates_blobs():
    x, y = _blobs()
    km = A.kmeans(x, 2, seed=0)
    assert A.cluster_purity(km.assignments, y) == 1.0
    assert np.allclose(np.sort(km.centroids[:, 0]), [-5, 5], atol=0.1)


def test_kmeans_single_cluster_is_mean():
    x = np.random.default_rng(1).normal(size=(10, 3))
    km = A.kmeans(x, 1, seed=0)
    assert np.allclose(km.centroids[0], x.mean(0))


def test_kmeans_deterministic_and_monotone():
    x = np.random.default_rng(2).normal(size=(60, 3))
    a, b = A.kmeans(x, 4, seed=7), A.kmeans(x, 4, seed=7)
    assert np.array_equal(a.assignments, b.assignments)
    assert all(later <= earlier + 1e-9 for earlier, later in zip(a.inertia, a.inertia[1:]))


def test_kmeans_needs_enough_points():
    with pytest.raises(ParameterError):
        A.kmeans(np.zeros((2, 2)), 3, seed=0)


def test_purity_examples():
    assert A.cluster_purity([0, 0, 0, 1, 1, 1], [0, 0, 1, 1, 1, 1]) == pytest.approx(5 / 6)
    assert A.cluster_purity([0, 1, 0, 1], [0, 0, 1, 1]) == 0.5
    assert A.cluster_purity([0, 0, 0, 0], [2, 2, 1, 0]) == 0.5


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40), st.permutations(range(4)))
def test_purity_relabel_invariant(pairs, perm):
    c, y = (np.array(v) for v in zip(*pairs))
    assert A.cluster_purity(np.array(perm)[c], y) == A.cluster_purity(c, y)


def test_silhouette_examples():
    x, y = _blobs()
    assert A.silhouette(x, y) > 0.95
    r = np.random.default_rng(3)
    assert abs(A.silhouette(r.normal(size=(200, 2)), r.integers(0, 2, 200))) < 0.1
    with pytest.raises(ParameterError):
        A.silhouette(x, np.zeros(len(x)))


def test_silhouette_singletons_score_zero():
    x = np.array([[0.0], [0.1], [5.0]])
    y = np.array([0, 0, 1])
    s = A.silhouette(x, y)
    per = [(5.0 - 0.1) / 5.0, (4.9 - 0.1) / 4.9, 0.0]
    assert s == pytest.approx(np.mean(per), abs=1e-12)


@given(st.integers(5, 40), st.integers(2, 4), st.integers(0, 2**32 - 1))
def test_silhouette_matches_sklearn(n, k, seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(n, 3))
    y = np.arange(n) % k
    r.shuffle(y)
    assert A.silhouette(x, y) == pytest.approx(silhouette_score(x, y), abs=1e-9)


def test_cluster_report():
    x, y = _blobs()
    rep = A.cluster_report(x, y)
    assert rep.purity == 1.0 and rep.silhouette > 0.95


# ---------------------------------------------------------------------------
# Welch test and sensitivity


def test_welch_example():
    r = A.welch_t_one_sided([4, 5, 6], [1, 2, 3])
    assert r.statistic == pytest.approx(3.67423, abs=1e-5)
    assert r.df == pytest.approx(4.0, abs=1e-12)
    assert r.p_value == pytest.approx(0.0107, abs=1e-3)


def test_welch_identical_samples():
    r = A.welch_t_one_sided([1.0, 2.0, 4.0], [1.0, 2.0, 4.0])
    assert r.statistic == 0.0 and r.p_value == pytest.approx(0.5, abs=1e-12)


@given(st.integers(2, 12), st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_welch_matches_scipy(na, nb, seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=na), r.normal(0.3, 2.0, size=nb)
    ours = A.welch_t_one_sided(a, b)
    ref = stats.ttest_ind(a, b, equal_var=False, alternative="greater")
    assert ours.statistic == pytest.approx(ref.statistic, rel=1e-10)
    assert ours.p_value == pytest.approx(ref.pvalue, abs=1e-8)


def test_welch_antisymmetry():
    a, b = [1.0, 2.5, 3.0], [0.5, 0.7, 2.0, 1.0]
    ab, ba = A.welch_t_one_sided(a, b), A.welch_t_one_sided(b, a)
    assert ab.statistic == pytest.approx(-ba.statistic)
    assert ab.p_value + ba.p_value == pytest.approx(1.0, abs=1e-12)


def test_welch_null_p_values_are_uniform():
    r = np.random.default_rng(11)
    ps = [A.welch_t_one_sided(r.normal(size=5), r.normal(size=5)).p_value for _ in range(1000)]
    assert stats.kstest(ps, "uniform").statistic < 0.06


def test_welch_degenerate():
    with pytest.raises(ParameterError):
        A.welch_t_one_sided([1.0], [1.0, 2.0])
    with pytest.raises(NumericError):
        A.welch_t_one_sided([1.0, 1.0], [2.0, 2.0])


def test_betainc_matches_scipy():
    from scipy.special import betainc

    for a, b, x in [(0.5, 0.5, 0.3), (2.0, 5.0, 0.9), (10.0, 0.5, 0.99), (3.0, 3.0, 0.5)]:
        assert A.betainc_regularized(a, b, x) == pytest.approx(betainc(a, b, x), abs=1e-12)


def test_sensitivity_examples():
    assert A.sensitivity_score([0.9, 0.8, 0.7, 0.6], [0, 1, 2, 5]) == pytest.approx(0.003571, abs=1e-6)
    assert A.sensitivity_score([0.8] * 4, [0, 1, 2, 5]) == 0.0
    with pytest.raises(NumericError):
        A.sensitivity_score([1, 2], [1, 1])


@given(st.floats(0.1, 10.0), st.integers(0, 2**32 - 1))
def test_sensitivity_scales_quadratically(c, seed):
    p = np.random.default_rng(seed).random(4)
    s = [0, 1, 2, 5]
    assert A.sensitivity_score(c * p, s) == pytest.approx(c * c * A.sensitivity_score(p, s), rel=1e-9)
