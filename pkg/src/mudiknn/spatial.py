"""k-nearest-head distance queries.

Two interchangeable backends answer the same queries: ``"kdtree"`` (scipy's
cKDTree) and ``"brute"``, an O(H) scan that sorts every distance and serves as
the reference the tree is tested against.
"""
import numpy as np
from scipy.spatial import cKDTree

from .errors import InsufficientHeadsError

BACKENDS = ("kdtree", "brute")


class HeadIndex:
    """Immutable point set with k-nearest-distance queries."""

    def __init__(self, heads, backend="kdtree"):
        if backend not in BACKENDS:
            raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")
        points = np.array(heads, dtype=np.float64).reshape(-1, 2)
        points.setflags(write=False)
        self.points = points
        self.backend = backend
        self._tree = cKDTree(points) if backend == "kdtree" and len(points) else None

    def size(self):
        return len(self.points)

    __len__ = size

    def query(self, queries, k, workers=1):
        """Ascending k smallest distances for each row of ``queries`` -> ``(M, k)``."""
        k = int(k)
        if k < 1:
            raise ValueError("k must be a positive integer")
        if k > self.size():
            raise InsufficientHeadsError()
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 2)
        if self._tree is not None:
            dist, _ = self._tree.query(queries, k=k, workers=workers)
            return dist.reshape(len(queries), k)
        return brute_force_knn(self.points, queries, k)


def brute_force_knn(points, queries, k):
    """Sort all head distances per query; stable so ties keep insertion order."""
    out = np.empty((len(queries), k))
    chunk = max(1, 2_000_000 // max(1, len(points)))
    for start in range(0, len(queries), chunk):
        q = queries[start:start + chunk]
        d = np.sqrt(((q[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))
        out[start:start + chunk] = np.sort(d, axis=1, kind="stable")[:, :k]
    return out


def build_index(heads, backend="kdtree"):
    return HeadIndex(heads, backend=backend)


def knn_distances(index, query, k):
    return index.query(np.asarray(query, dtype=np.float64).reshape(1, 2), k)[0]


def mean_knn_distance(index, query, k):
    return float(knn_distances(index, query, k).mean())
