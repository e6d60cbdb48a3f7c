import math

import numpy as np
import pytest

from vern import (Adjacency, Tensor, build_wsi_graph, knn_graph,
                  normalized_adjacency)
from vern.data import PatchRecord
from vern.errors import DataError, ParameterError

from helpers import make_graph


def brute_force_knn(coords: np.ndarray, k: int) -> set[tuple[int, int]]:
    """Independent O(n^2) construction with (distance, index) ordering."""
    n = len(coords)
    directed = set()
    for i in range(n):
        cands = sorted(
            (math.dist(coords[i], coords[j]), j) for j in range(n) if j != i)
        for _, j in cands[:min(k, n - 1)]:
            directed.add((i, j))
    sym = set()
    for i, j in directed:
        sym.add((i, j))
        sym.add((j, i))
    return sym


def test_knn_collinear_hand_case():
    adj = knn_graph(np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]]), k=1)
    # directed: 0->1, 1->0, 2->1; union symmetrized
    assert set(adj.edges) == {(0, 1), (1, 0), (1, 2), (2, 1)}


def test_knn_single_node():
    assert knn_graph(np.array([[5.0, 5.0]]), k=9).edges == []


def test_knn_unit_square_complete():
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    adj = knn_graph(coords, k=3)
    assert len(adj.edges) == 12  # complete graph on 4 nodes, both directions


def test_knn_tie_break_prefers_lower_index():
    # nodes 1 and 2 are equidistant from node 0
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [10.0, 0.0]])
    adj = knn_graph(coords, k=1)
    assert (0, 1) in adj.edges and (0, 2) not in adj.edges


def test_knn_rejects_bad_inputs():
    with pytest.raises(DataError):
        knn_graph(np.array([[np.nan, 0.0]]), k=1)
    with pytest.raises(ParameterError):
        knn_graph(np.zeros((3, 2)), k=0)
    with pytest.raises(ParameterError):
        knn_graph(np.zeros((3, 3)), k=1)


def test_knn_matches_brute_force():
    rng = np.random.default_rng(20)
    for trial in range(30):
        n = int(rng.integers(1, 60))
        coords = rng.uniform(0, 50, (n, 2))
        for k in (1, 3, 9):
            adj = knn_graph(coords, k)
            assert set(adj.edges) == brute_force_knn(coords, k), (trial, k)


def test_adjacency_rejects_self_loops():
    with pytest.raises(ParameterError):
        Adjacency(3, [(0, 0)])


def test_adjacency_symmetrizes():
    adj = Adjacency(3, [(0, 1)])
    assert adj.edges == [(0, 1), (1, 0)]
    assert list(adj.neighbors(1)) == [0]
    assert list(adj.neighbors(2)) == []


def test_normalized_adjacency_single_node():
    out = normalized_adjacency(Adjacency(1, []))
    np.testing.assert_array_equal(out.data, [[1.0]])


def test_normalized_adjacency_two_nodes():
    out = normalized_adjacency(Adjacency(2, [(0, 1)]))
    np.testing.assert_allclose(out.data, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


def test_normalized_adjacency_path_graph():
    out = normalized_adjacency(Adjacency(3, [(0, 1), (1, 2)])).data
    s6 = 1.0 / math.sqrt(6.0)
    expected = np.array([[0.5, s6, 0.0],
                         [s6, 1.0 / 3.0, s6],
                         [0.0, s6, 0.5]])
    np.testing.assert_allclose(out, expected, atol=1e-15)


def test_normalized_adjacency_consistency_and_bounds():
    rng = np.random.default_rng(31)
    for _ in range(10):
        n = int(rng.integers(2, 40))
        adj = knn_graph(rng.uniform(0, 100, (n, 2)), 3)
        norm = normalized_adjacency(adj).data
        np.testing.assert_allclose(norm, norm.T, atol=1e-12)
        assert norm.min() >= 0.0 and norm.max() <= 1.0
        # recompute each entry independently from the edge list
        deg = adj.degrees() + 1
        recomputed = np.zeros((n, n))
        for i, j in adj.edges:
            recomputed[i, j] = 1.0 / math.sqrt(deg[i] * deg[j])
        for i in range(n):
            recomputed[i, i] = 1.0 / deg[i]
        np.testing.assert_allclose(norm, recomputed, atol=1e-12)


def test_normalized_adjacency_spectral_radius():
    rng = np.random.default_rng(8)
    for _ in range(10):
        n = int(rng.integers(2, 51))
        norm = normalized_adjacency(knn_graph(rng.uniform(0, 10, (n, 2)), 4)).data
        v = rng.standard_normal(n)
        for _ in range(200):  # power iteration
            v = norm @ v
            v /= np.linalg.norm(v)
        lam = abs(v @ norm @ v)
        assert lam <= 1.0 + 1e-9


def _records(rng, n):
    return [PatchRecord(patch_id=i, x=float(rng.uniform(0, 100)),
                        y=float(rng.uniform(0, 100)),
                        feat_a=rng.standard_normal(1024),
                        feat_b=rng.standard_normal(768)) for i in range(n)]


def test_build_wsi_graph_k_saturates():
    rng = np.random.default_rng(1)
    g = build_wsi_graph(_records(rng, 10), k=9, label=1, slide_id="s")
    assert all(len(g.adj.neighbors(v)) == 9 for v in range(10))


def test_build_wsi_graph_clamps_k():
    rng = np.random.default_rng(2)
    g = build_wsi_graph(_records(rng, 3), k=9)
    assert all(len(g.adj.neighbors(v)) == 2 for v in range(3))


def test_build_wsi_graph_rejects_empty():
    with pytest.raises(ParameterError):
        build_wsi_graph([], k=9)


def test_build_permutation_consistency():
    rng = np.random.default_rng(3)
    records = _records(rng, 12)
    g = build_wsi_graph(records, k=3)
    perm = rng.permutation(12)
    g_perm = build_wsi_graph([records[i] for i in perm], k=3)
    pmat = np.zeros((12, 12))
    pmat[np.arange(12), perm] = 1.0
    np.testing.assert_allclose(g_perm.norm_adj.data,
                               pmat @ g.norm_adj.data @ pmat.T, atol=1e-12)


def test_neighbor_mean_matrix_rows():
    adj = Adjacency(4, [(0, 1), (0, 2)])
    m = adj.neighbor_mean_matrix()
    np.testing.assert_allclose(m[0], [0.0, 0.5, 0.5, 0.0])
    np.testing.assert_allclose(m[1], [1.0, 0.0, 0.0, 0.0])
    np.testing.assert_array_equal(m[3], np.zeros(4))  # isolated node


def test_export_graph_csv(tmp_path):
    g = make_graph(np.random.default_rng(0), 6, 4, 3)
    edges = tmp_path / "edges.csv"
    nodes = tmp_path / "nodes.csv"
    from vern import export_graph_csv
    export_graph_csv(g, edges, nodes)
    lines = edges.read_text().strip().splitlines()
    assert lines[0] == "src,dst"
    assert len(lines) - 1 == len(g.adj.edges) // 2
    assert len(nodes.read_text().strip().splitlines()) == 7
