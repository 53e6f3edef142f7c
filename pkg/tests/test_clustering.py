import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rtfn.clustering import _lloyd, kmeans, leaderboard, rand_index, top1_accuracy
from rtfn.tensor import DimensionError, make_rng


def brute_rand_index(a, b):
    agree = total = 0
    for i, j in itertools.combinations(range(len(a)), 2):
        total += 1
        agree += (a[i] == a[j]) == (b[i] == b[j])
    return agree / total


def test_rand_index_examples():
    assert rand_index([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0
    assert rand_index([0, 0, 1, 1], [0, 0, 1, 0]) == 0.5
    assert rand_index([0, 1], [0, 0]) == 0.0
    with pytest.raises(DimensionError):
        rand_index([0, 1], [0, 1, 1])
    with pytest.raises(ValueError):
        rand_index([0], [0])


labelings = st.integers(2, 50).flatmap(
    lambda s: st.tuples(st.lists(st.integers(0, 4), min_size=s, max_size=s),
                        st.lists(st.integers(0, 4), min_size=s, max_size=s)))


@settings(max_examples=100, deadline=None)
@given(labelings)
def test_rand_index_matches_brute_force(pair):
    a, b = np.array(pair[0]), np.array(pair[1])
    assert rand_index(a, b) == brute_rand_index(a, b)


@settings(max_examples=50, deadline=None)
@given(labelings, st.permutations(range(5)))
def test_rand_index_symmetric_and_relabel_invariant(pair, perm):
    a, b = np.array(pair[0]), np.array(pair[1])
    assert rand_index(a, b) == rand_index(b, a)
    assert rand_index(a, np.array(perm)[b]) == rand_index(a, b)


def test_top1_accuracy():
    assert top1_accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert top1_accuracy([1, 2], [0, 0]) == 0.0
    assert top1_accuracy([0, 1, 1, 0], [0, 1, 1, 1]) == 0.75
    with pytest.raises(DimensionError):
        top1_accuracy([0], [0, 1])


def test_kmeans_single_cluster_is_the_mean():
    pts = make_rng(0).standard_normal((20, 3))
    res = kmeans(pts, 1)
    np.testing.assert_allclose(res.centroids[0], pts.mean(axis=0), atol=1e-12)
    assert res.inertia == pytest.approx(pts.var(axis=0).sum() * 20, rel=1e-12)


def test_kmeans_two_pairs():
    pts = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
    res = kmeans(pts, 2, make_rng(1))
    assert res.labels[0] == res.labels[1] != res.labels[2] == res.labels[3]
    assert res.inertia == pytest.approx(4 * 0.25)


def test_kmeans_k_equals_s():
    pts = make_rng(2).standard_normal((6, 2))
    res = kmeans(pts, 6)
    assert res.inertia == 0.0 and len(set(res.labels.tolist())) == 6


def test_kmeans_repairs_empty_clusters_with_duplicates():
    pts = np.array([[0.0], [0.0], [0.0], [5.0]])
    res = kmeans(pts, 3, make_rng(3))
    assert set(res.labels.tolist()) == {0, 1, 2}
    assert np.all((res.labels >= 0) & (res.labels < 3))


def test_kmeans_errors():
    with pytest.raises(ValueError):
        kmeans(np.zeros((2, 2)), 3)
    with pytest.raises(DimensionError):
        kmeans(np.zeros(5), 1)


@pytest.mark.parametrize("seed", range(5))
def test_kmeans_inertia_non_increasing(seed):
    pts = make_rng(seed).standard_normal((60, 4))
    res = _lloyd(pts, 4, make_rng(seed + 100), 300, 1e-6)
    h = np.array(res.history)
    assert np.all(np.diff(h) <= 1e-9 * h[0])
    labels_inertia = ((pts - res.centroids[res.labels]) ** 2).sum()
    assert res.inertia == pytest.approx(labels_inertia)


def test_kmeans_separates_distant_blobs():
    rng = make_rng(4)
    truth = np.repeat([0, 1], 50)
    pts = rng.standard_normal((100, 2))
    pts[truth == 1] += 10.0 / np.sqrt(2)  # centers 10 sigma apart
    assert rand_index(truth, kmeans(pts, 2, rng).labels) >= 0.99


def test_kmeans_deterministic_given_seed():
    pts = make_rng(5).standard_normal((30, 3))
    a, b = kmeans(pts, 3, make_rng(9)), kmeans(pts, 3, make_rng(9))
    assert a.labels.tolist() == b.labels.tolist() and a.inertia == b.inertia


def test_leaderboard_trivial_cases():
    b = leaderboard([[0.9, 0.8, 0.7]], ["only"])
    assert (b.win[0], b.tie[0], b.lose[0], b.total[0], b.avg_rank[0]) == (3, 0, 0, 3, 1.0)
    b = leaderboard([[0.5, 0.6], [0.5, 0.6]], ["a", "b"])
    assert b.tie.tolist() == [2, 2] and b.win.tolist() == [0, 0] and b.avg_rank.tolist() == [1.0, 1.0]


def test_leaderboard_hand_case():
    # dataset 1: A=0.9 wins, B=C=0.8 share rank 2
    # dataset 2: A=B=0.7 tie at rank 1, C=0.6 rank 3
    b = leaderboard([[0.9, 0.7], [0.8, 0.7], [0.8, 0.6]], ["A", "B", "C"])
    assert b.win.tolist() == [1, 0, 0]
    assert b.tie.tolist() == [1, 1, 0]
    assert b.lose.tolist() == [0, 1, 2]
    assert b.best.tolist() == [2, 1, 0]
    assert b.avg_rank.tolist() == [1.0, 1.5, 2.5]
    assert np.all(b.win + b.tie + b.lose == b.total)
    gap = leaderboard([[0.9, 0.7], [0.8, 0.7], [0.8, 0.6]], ["A", "B", "C"], accuracy_gap=True)
    np.testing.assert_allclose(gap.avg_rank, [0.0, 0.05, 0.1], atol=1e-12)


def test_leaderboard_skips_missing_and_formats():
    b = leaderboard([[0.9, np.nan], [0.8, 0.5]], ["A", "B"])
    assert b.total.tolist() == [1, 2] and b.win.tolist() == [1, 1]
    assert b.to_csv().splitlines()[0] == "algorithm,win,tie,lose,best,total,avg_rank"
    lines = b.to_table().splitlines()
    assert len({len(l) for l in lines}) == 1 or lines[0].startswith("algorithm")
    with pytest.raises(ValueError):
        leaderboard(np.zeros((0, 0)))
