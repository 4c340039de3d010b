import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import cdist

from graphoed import graph as gmod
from graphoed.errors import DataError


def brute_force_knn_union(points, k):
    """Quadratic oracle: directed kNN with (distance, index) ordering, then union."""
    n = len(points)
    d2 = cdist(points, points, "sqeuclidean")
    edges = {}
    for i in range(n):
        order = sorted((d2[i, j], j) for j in range(n) if j != i)
        for dist, j in order[:k]:
            edges[(min(i, j), max(i, j))] = dist
    return edges


class TestBuildKnn:
    def test_collinear_chain(self):
        pts = np.array([[0.0, 0], [1, 0], [2, 0], [3, 0], [4, 0]])
        g = gmod.build_knn_graph(pts, 2)
        # node 2's own two nearest are {1, 3}; the union with 0 -> 2 and
        # 4 -> 2 (their second-nearest) adds the outer pair
        assert {1, 3} <= set(g.neighbors[2].tolist())
        assert sorted(g.neighbors[0].tolist()) == [1, 2]
        assert sorted(g.neighbors[2].tolist()) == [0, 1, 3, 4]

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_brute_force_oracle(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.standard_normal((60, 3))
        k = 4
        g = gmod.build_knn_graph(pts, k)
        oracle_edges = brute_force_knn_union(pts, k)
        got_edges = {(i, j): d for i, j, d in g.edges()}
        assert set(got_edges) == set(oracle_edges)
        for key, d in oracle_edges.items():
            assert got_edges[key] == pytest.approx(d, rel=1e-12)
        assert g.gamma == pytest.approx(np.median(list(oracle_edges.values())), rel=1e-12)

    def test_adjacency_symmetric(self):
        rng = np.random.default_rng(3)
        g = gmod.build_knn_graph(rng.standard_normal((80, 2)), 5)
        for i in range(g.n):
            for j in g.neighbors[i]:
                assert i in g.neighbors[j]
        for i in range(g.n):
            assert i not in g.neighbors[i]

    def test_duplicates_allowed(self):
        pts = np.array([[0.0, 0], [0, 0], [1, 0]])
        g = gmod.build_knn_graph(pts, 1)
        assert 1 in g.neighbors[0]

    def test_k_too_large(self):
        with pytest.raises(DataError):
            gmod.build_knn_graph(np.zeros((4, 2)), 4)

    def test_k_too_small(self):
        with pytest.raises(DataError):
            gmod.build_knn_graph(np.zeros((4, 2)), 0)


@settings(max_examples=20, deadline=None)
@given(
    n=st.integers(min_value=6, max_value=40),
    k=st.integers(min_value=1, max_value=4),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_knn_symmetry_and_gamma_property(n, k, seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, size=(n, 2))
    g = gmod.build_knn_graph(pts, min(k, n - 1))
    edge_d2 = [d for _, _, d in g.edges()]
    med = float(np.median(edge_d2))
    assert g.gamma == (med if med > 0 else 1.0)
    for i in range(n):
        for j in g.neighbors[i]:
            assert i in g.neighbors[j]


class TestLaplacian:
    def test_coincident_pair(self):
        pts = np.array([[1.0, 1.0], [1.0, 1.0]])
        g = gmod.build_knn_graph(pts, 1)
        lap = gmod.build_laplacian(g)
        np.testing.assert_allclose(lap.toarray(), [[1.0, -1.0], [-1.0, 1.0]], atol=0)

    def test_row_sums_vanish(self, small_regularized):
        ds, g, _ = small_regularized
        lap = gmod.build_laplacian(g)
        row_norm = np.abs(lap).sum(axis=1)
        resid = np.abs(lap @ np.ones(g.n))
        assert np.all(resid <= 1e-12 * np.maximum(row_norm, 1.0))

    def test_psd_by_dense_eigensolver(self):
        ds = __import__("graphoed").make_blobs_2d(50, 3, seed=8)
        g = gmod.build_knn_graph(ds, 5)
        lap = gmod.build_laplacian(g)
        vals = np.linalg.eigvalsh(lap.toarray())
        assert vals.min() >= -1e-10

    def test_quadratic_form_nonnegative(self, small_regularized):
        _, g, _ = small_regularized
        lap = gmod.build_laplacian(g)
        rng = np.random.default_rng(0)
        for _ in range(100):
            x = rng.standard_normal(g.n)
            assert x @ (lap @ x) >= -1e-10 * (x @ x)

    def test_offdiagonals_nonpositive(self, small_regularized):
        _, g, _ = small_regularized
        lap = gmod.build_laplacian(g).tocoo()
        off = lap.data[lap.row != lap.col]
        assert np.all(off <= 0)


class TestRegularizer:
    def test_eta_one_is_shift(self, small_regularized):
        _, g, _ = small_regularized
        lap = gmod.build_laplacian(g)
        L = gmod.build_regularizer(lap, 0.5, 1)
        expect = lap + 0.5 * sp.eye_array(g.n)
        assert abs(L - expect).max() <= 1e-15

    def test_eta_two_matches_dense_power(self):
        ds = __import__("graphoed").make_blobs_2d(50, 3, seed=1)
        g = gmod.build_knn_graph(ds, 5)
        lap = gmod.build_laplacian(g)
        L = gmod.build_regularizer(lap, 1e-2, 2)
        dense = lap.toarray() + 1e-2 * np.eye(g.n)
        np.testing.assert_allclose(L.toarray(), dense @ dense, atol=1e-12)

    def test_spd_floor(self, small_regularized):
        _, g, L = small_regularized
        tau_eta = 1e-2**2
        rng = np.random.default_rng(1)
        for _ in range(50):
            x = rng.standard_normal(g.n)
            assert x @ (L @ x) >= tau_eta * (x @ x) * (1 - 1e-10)

    def test_sparsity_bound(self, small_regularized):
        _, g, L = small_regularized
        k_sym = g.max_degree()
        nnz_per_row = np.diff(L.indptr)
        assert nnz_per_row.max() <= (k_sym + 1) ** 2

    def test_bad_eta(self, small_regularized):
        _, g, _ = small_regularized
        lap = gmod.build_laplacian(g)
        with pytest.raises(DataError):
            gmod.build_regularizer(lap, 1e-2, 0)
        with pytest.raises(DataError):
            gmod.build_regularizer(lap, 1e-2, 2.5)

    def test_bad_tau(self, small_regularized):
        _, g, _ = small_regularized
        lap = gmod.build_laplacian(g)
        with pytest.raises(DataError):
            gmod.build_regularizer(lap, 0.0, 2)

    def test_large_eta_warns(self, small_regularized):
        _, g, _ = small_regularized
        lap = gmod.build_laplacian(g)
        with pytest.warns(UserWarning, match="fill-in"):
            gmod.build_regularizer(lap, 1e-2, 4)

    def test_symmetric_exactly(self, small_regularized):
        _, _, L = small_regularized
        assert abs(L - L.T).max() == 0.0


def test_matrix_market_roundtrip(tmp_path, small_regularized):
    _, _, L = small_regularized
    path = tmp_path / "L.mtx"
    gmod.save_matrix(path, L)
    back = gmod.load_matrix(path)
    assert abs(back - L).max() <= 1e-12
