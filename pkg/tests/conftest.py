import numpy as np
import pytest

from graphoed import build_knn_graph, build_laplacian, build_regularizer, make_blobs_2d


@pytest.fixture
def blob_dataset():
    return make_blobs_2d(120, 3, seed=11)


@pytest.fixture
def small_regularized(blob_dataset):
    """Dataset with its graph and default regularizer, shared across tests."""
    graph = build_knn_graph(blob_dataset, 6)
    lap = build_laplacian(graph)
    L = build_regularizer(lap, 1e-2, 2)
    return blob_dataset, graph, L


def path_graph_points(n):
    """Collinear equally spaced points; k=1 union-symmetrizes to a path."""
    return np.stack([np.arange(n, dtype=float), np.zeros(n)], axis=1)


@pytest.fixture
def path_graph():
    pts = path_graph_points(10)
    return build_knn_graph(pts, 1)
