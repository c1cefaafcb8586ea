import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import adjusted_rand_score

from robustps import dataset, spectral
from robustps.affinity import KernelParams, build_affinity
from robustps.errors import DataError

from conftest import random_dataset


def blobs(seed, sizes=(4, 4, 4), spread=0.1, gap=10.0):
    rng = np.random.default_rng(seed)
    centres = np.array([[0, 0], [gap, 0], [0, gap]], dtype=float)
    X = np.concatenate([rng.normal(c, spread, size=(s, 2)) for c, s in zip(centres, sizes)])
    truth = np.repeat(np.arange(len(sizes)), sizes)
    return X, truth


def brute_force_inertia(X, n):
    """Minimum within-cluster sum of squares over all labelings with no empty cluster."""
    m = len(X)
    labels = np.array(list(itertools.product(range(n), repeat=m)))
    sq = (X ** 2).sum(axis=1)
    total = np.zeros(len(labels))
    valid = np.ones(len(labels), bool)
    for k in range(n):
        mask = (labels == k).astype(float)
        cnt = mask.sum(axis=1)
        valid &= cnt > 0
        sx = mask @ X
        total += mask @ sq - (sx ** 2).sum(axis=1) / np.maximum(cnt, 1)
    best = np.argmin(np.where(valid, total, np.inf))
    return total[best], labels[best]


def test_block_diagonal_affinity():
    A = np.zeros((10, 10))
    A[:4, :4] = 1
    A[4:, 4:] = 1
    emb = spectral.spectral_embed(A, 2)
    assert np.allclose(emb[:4], emb[0]) and np.allclose(emb[4:], emb[4])
    out = spectral.cluster_affinity(A, 2, seed=0)
    assert out.labels.tolist() == [0] * 4 + [1] * 6
    assert out.inertia == pytest.approx(0, abs=1e-12)


def test_identity_affinity_is_degenerate_but_runs():
    emb, vals = spectral.spectral_embed(np.eye(6), 2, return_eigenvalues=True)
    assert np.allclose(vals, 1)
    norms = np.linalg.norm(emb, axis=1)
    assert np.all((norms == 0) | np.isclose(norms, 1))  # exactly zero rows stay zero


def test_zero_degree_row_is_named():
    A = np.ones((4, 4))
    A[2] = A[:, 2] = 0
    with pytest.raises(DataError, match="sample 2"):
        spectral.spectral_embed(A, 2)


def test_sign_convention_and_unit_rows():
    data = random_dataset(2, m=30)
    A = build_affinity(data).values
    vals, vecs = spectral.top_eigenpairs(spectral.normalized_affinity(A), 3)
    piv = np.argmax(np.abs(vecs), axis=0)
    assert np.all(vecs[piv, range(3)] > 0)
    assert np.all(np.diff(vals) <= 0)
    emb = spectral.spectral_embed(A, 3)
    assert np.allclose(np.linalg.norm(emb, axis=1), 1)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_operator_spectrum(seed):
    data = random_dataset(seed, m=25)
    S = spectral.normalized_affinity(build_affinity(data).values)
    ev = np.linalg.eigvalsh(S)
    assert ev[0] >= -1 - 1e-10 and ev[-1] <= 1 + 1e-10
    assert ev[-1] == pytest.approx(1.0, abs=1e-8)  # dense affinity graphs are connected


def test_embedding_permutation_equivariance():
    data = random_dataset(7, m=24)
    perm = np.random.default_rng(0).permutation(24)
    A = build_affinity(data).values
    e1 = spectral.spectral_embed(A, 3)
    e2 = spectral.spectral_embed(A[np.ix_(perm, perm)], 3)
    assert np.allclose(e2, e1[perm], atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_kmeans_matches_brute_force(seed):
    X, truth = blobs(seed)
    best, best_labels = brute_force_inertia(X, 3)
    km = spectral.kmeans(X, 3, restarts=10, seed=seed)
    assert km.inertia == pytest.approx(best, rel=1e-9)
    assert adjusted_rand_score(truth, km.labels) == 1.0
    assert adjusted_rand_score(best_labels, km.labels) == 1.0


def test_kmeans_brute_force_on_unstructured_points():
    X = np.random.default_rng(3).normal(size=(9, 2))
    best, _ = brute_force_inertia(X, 3)
    km = spectral.kmeans(X, 3, restarts=30, seed=0)
    assert km.inertia >= best - 1e-9
    assert km.inertia == pytest.approx(best, rel=1e-9)


def test_single_cluster_inertia_is_total_variance():
    X = np.random.default_rng(1).normal(size=(40, 3))
    km = spectral.kmeans(X, 1, restarts=2, seed=0)
    assert km.inertia == pytest.approx(((X - X.mean(axis=0)) ** 2).sum())


def test_duplicated_points_give_same_centroids():
    X, _ = blobs(4, sizes=(10, 10, 10), spread=0.5)
    a = spectral.kmeans(X, 3, seed=1)
    b = spectral.kmeans(np.concatenate([X, X]), 3, seed=1)
    ca = sorted(map(tuple, np.round([X[a.labels == k].mean(axis=0) for k in range(3)], 10)))
    XX = np.concatenate([X, X])
    cb = sorted(map(tuple, np.round([XX[b.labels == k].mean(axis=0) for k in range(3)], 10)))
    assert ca == cb
    assert b.inertia == pytest.approx(2 * a.inertia)


def test_saturated_case():
    X = np.random.default_rng(0).normal(size=(5, 2))
    km = spectral.kmeans(X, 5, restarts=3, seed=0)
    assert sorted(km.labels.tolist()) == [0, 1, 2, 3, 4]
    assert km.inertia == 0.0


def test_too_few_distinct_points():
    with pytest.raises(DataError):
        spectral.kmeans(np.ones((6, 2)), 2)


def test_lloyd_history_non_increasing():
    X = np.random.default_rng(5).normal(size=(200, 3))
    for r in range(5):
        rng = np.random.default_rng(r)
        _, _, inertia, hist = spectral.lloyd(X, spectral.kmeans_plusplus(X, 4, rng))
        assert np.all(np.diff(hist) <= 1e-9)
        assert inertia == hist[-1]


def test_best_restart_no_worse_than_any_single():
    X = np.random.default_rng(6).normal(size=(150, 2))
    best = spectral.kmeans(X, 5, restarts=8, seed=10)
    for r in range(8):
        single = spectral.kmeans(X, 5, restarts=1, seed=10 + r)
        assert best.inertia <= single.inertia


def test_exact_ties_go_to_lowest_index():
    X = np.array([[0.0], [1.0], [2.0]])
    labels, _, _, _ = spectral.lloyd(X, np.array([[0.0], [2.0]]), max_iter=1)
    assert labels[1] == 0


def test_cluster_recovers_separated_patterns():
    data = dataset.synthesize(dataset.separated(m=600), seed=0)
    out = spectral.cluster(data, seed=0)
    assert out.n == 3 and out.m == data.m
    assert adjusted_rand_score(data.pattern, out.labels) >= 0.95
    assert np.all(out.sizes() > 0)


def test_cluster_is_deterministic():
    data = dataset.synthesize(dataset.confounded(m=300), seed=1)
    a, b = spectral.cluster(data, seed=4), spectral.cluster(data, seed=4)
    assert np.array_equal(a.labels, b.labels) and a.inertia == b.inertia


def test_cluster_invariant_to_category_relabeling():
    data = random_dataset(9, m=40, n_cat=4)
    perm = np.array([2, 0, 3, 1])
    relabeled = data.__class__(data.schema, data.continuous, perm[data.discrete], data.treatment,
                               data.categories, data.treatment_labels)
    a = spectral.cluster(data, 3, seed=0)
    b = spectral.cluster(relabeled, 3, seed=0)
    assert adjusted_rand_score(a.labels, b.labels) == 1.0


def test_cluster_with_cached_affinity_matches():
    data = dataset.synthesize(dataset.separated(m=150), seed=2)
    A = build_affinity(data)
    assert np.array_equal(spectral.cluster(data, seed=1).labels,
                          spectral.cluster(data, seed=1, affinity=A).labels)


def test_cluster_above_cap_assigns_everyone():
    data = dataset.synthesize(dataset.separated(m=400), seed=3)
    out = spectral.cluster(data, seed=0, cap=150)
    assert out.m == 400 and np.all(out.sizes() > 0)
    assert adjusted_rand_score(data.pattern, out.labels) >= 0.95
