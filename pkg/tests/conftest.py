import numpy as np
import pytest

from vlpkg import augment_reciprocal, compute_distances
from vlpkg.synth import random_graph


@pytest.fixture(scope="session")
def small_kg():
    """20-entity random graph with reciprocal relations, shared read-only."""
    return augment_reciprocal(random_graph(n_entities=20, n_relations=3,
                                           n_train=120, n_valid=15,
                                           n_test=15, seed=3))


@pytest.fixture(scope="session")
def small_index(small_kg):
    return compute_distances(small_kg, cap=8)


def fd_array(fn, arr, h=1e-5):
    """Central finite differences of scalar fn() over every entry of arr."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = fn()
        flat[i] = keep - h
        down = fn()
        flat[i] = keep
        out[i] = (up - down) / (2 * h)
    return grad


def max_rel_err(analytic, numeric):
    scale = max(1.0, float(np.abs(numeric).max()))
    return float(np.abs(analytic - numeric).max()) / scale


def floyd_warshall(n, edges, cap):
    """Dense all-pairs shortest hop count, saturated at cap.

    Reference implementation for checking the BFS-based index: plain
    min-plus iteration over an undirected unweighted adjacency matrix.
    """
    big = n + cap + 1
    dist = np.full((n, n), big, dtype=np.int64)
    np.fill_diagonal(dist, 0)
    for a, b in edges:
        if a != b:
            dist[a, b] = 1
            dist[b, a] = 1
    for k in range(n):
        np.minimum(dist, dist[:, k, None] + dist[None, k, :], out=dist)
    return np.minimum(dist, cap)
