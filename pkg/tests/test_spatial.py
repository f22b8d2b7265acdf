import math

import numpy as np
import pytest

from mudiknn.errors import InsufficientHeadsError
from mudiknn.spatial import HeadIndex, build_index, knn_distances, mean_knn_distance


def oracle(points, query, k):
    """Plain-Python sort of every distance."""
    d = sorted(math.hypot(query[0] - x, query[1] - y) for x, y in points)
    return d[:k]


def test_sizes():
    assert build_index([]).size() == 0
    assert build_index([(0, 0), (3, 4)]).size() == 2
    assert build_index([(1, 1), (1, 1)]).size() == 2


@pytest.mark.parametrize("backend", ["kdtree", "brute"])
def test_small_examples(backend):
    assert knn_distances(build_index([(0, 0)], backend), (3, 4), 1).tolist() == [5.0]
    assert knn_distances(build_index([(0, 0), (10, 0)], backend), (5, 0), 2).tolist() == [5.0, 5.0]
    assert mean_knn_distance(build_index([(0, 0), (10, 0)], backend), (5, 0), 2) == 5.0
    assert mean_knn_distance(build_index([(0, 0), (0, 10)], backend), (0, 0), 2) == 5.0


@pytest.mark.parametrize("backend", ["kdtree", "brute"])
def test_insufficient_heads(backend):
    with pytest.raises(InsufficientHeadsError, match="insufficient heads for k"):
        knn_distances(build_index([(0, 0)], backend), (1, 1), 2)
    with pytest.raises(InsufficientHeadsError):
        build_index([], backend).query(np.zeros((3, 2)), 1)


def test_index_is_immutable_copy():
    heads = np.array([[1.0, 2.0]])
    index = HeadIndex(heads)
    heads[0, 0] = 50
    assert index.points[0, 0] == 1.0
    with pytest.raises(ValueError):
        index.points[0, 0] = 3


@pytest.mark.parametrize("k", [1, 2, 3])
def test_mean_matches_oracle_on_random_heads(rng, k):
    heads = rng.uniform(0, 224, (50, 2))
    index = build_index(heads)
    for q in rng.uniform(0, 224, (100, 2)):
        expected = sum(oracle(heads, q, k)) / k
        assert mean_knn_distance(index, q, k) == pytest.approx(expected, rel=1e-9)


def test_oracle_equivalence_many_instances(rng):
    for _ in range(100):
        n = int(rng.integers(1, 201))
        k = int(rng.integers(1, min(6, n) + 1))
        heads = rng.uniform(0, 500, (n, 2))
        queries = rng.uniform(-20, 520, (5, 2))
        got = build_index(heads).query(queries, k)
        brute = build_index(heads, "brute").query(queries, k)
        for q, row, brow in zip(queries, got, brute):
            expected = oracle(heads, q, k)
            np.testing.assert_allclose(row, expected, rtol=1e-9)
            np.testing.assert_allclose(brow, expected, rtol=1e-9)


def test_monotone_in_k(rng):
    heads = rng.uniform(0, 100, (30, 2))
    index = build_index(heads)
    for q in rng.uniform(0, 100, (20, 2)):
        means = [mean_knn_distance(index, q, k) for k in range(1, 11)]
        assert all(a <= b + 1e-12 for a, b in zip(means, means[1:]))


def test_translation_invariance(rng):
    heads = rng.uniform(0, 100, (40, 2))
    queries = rng.uniform(0, 100, (25, 2))
    shift = np.array([37.25, -12.5])
    for k in (1, 3, 6):
        a = build_index(heads).query(queries, k)
        b = build_index(heads + shift).query(queries + shift, k)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_duplicates_counted():
    index = build_index([(1, 1), (1, 1), (5, 1)])
    assert knn_distances(index, (1, 1), 3).tolist() == [0.0, 0.0, 4.0]
