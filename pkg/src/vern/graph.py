"""Spatial topological graphs over slide patches.

Each slide becomes an undirected KNN graph on patch-center coordinates,
plus the symmetrically normalized adjacency operator used by the graph
convolution. Self-loops are never stored as edges; they enter only through
the A + I term of the normalized operator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ParameterError
from .tensor import Tensor


class Adjacency:
    """Undirected edge structure on ``n`` nodes.

    Edges are stored in both directions, sorted, with no self-loops.
    """

    def __init__(self, n: int, edges):
        if n < 1:
            raise ParameterError(f"adjacency needs n >= 1, got {n}")
        sym: set[tuple[int, int]] = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise ParameterError(f"self-loop ({i},{j}) is not storable")
            if not (0 <= i < n and 0 <= j < n):
                raise ParameterError(f"edge ({i},{j}) out of range for n={n}")
            sym.add((i, j))
            sym.add((j, i))
        self.n = n
        self.edges: list[tuple[int, int]] = sorted(sym)
        self._neighbors: list[np.ndarray] | None = None

    def __eq__(self, other) -> bool:
        return isinstance(other, Adjacency) and self.n == other.n \
            and self.edges == other.edges

    def __repr__(self) -> str:
        return f"Adjacency(n={self.n}, undirected_edges={len(self.edges) // 2})"

    def neighbors(self, v: int) -> np.ndarray:
        return self.neighbor_lists()[v]

    def neighbor_lists(self) -> list[np.ndarray]:
        if self._neighbors is None:
            buckets: list[list[int]] = [[] for _ in range(self.n)]
            for i, j in self.edges:
                buckets[i].append(j)
            self._neighbors = [np.array(b, dtype=np.int64) for b in buckets]
        return self._neighbors

    def degrees(self) -> np.ndarray:
        return np.array([len(b) for b in self.neighbor_lists()], dtype=np.int64)

    def dense(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j in self.edges:
            a[i, j] = 1.0
        return a

    def neighbor_mean_matrix(self) -> np.ndarray:
        """Row-stochastic averaging operator: M[v,u] = 1/|N(v)| for u in N(v).

        Rows of isolated nodes are all zero (empty neighborhood aggregates
        to the zero vector).
        """
        m = np.zeros((self.n, self.n))
        for v, nbrs in enumerate(self.neighbor_lists()):
            if len(nbrs):
                m[v, nbrs] = 1.0 / len(nbrs)
        return m


def knn_graph(coords: np.ndarray, k: int) -> Adjacency:
    """Symmetrized k-nearest-neighbor graph on 2-D points.

    Each node selects its min(k, n-1) nearest others by Euclidean distance,
    ties broken by lower node index; an undirected edge is kept if either
    endpoint selected the other. A single node yields an empty edge set.
    """
    pts = np.asarray(coords, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ParameterError(f"coords must be n x 2, got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise DataError("non-finite coordinates")
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    n = pts.shape[0]
    if n == 1:
        return Adjacency(1, [])
    kk = min(k, n - 1)
    diff = pts[:, None, :] - pts[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)
    # stable argsort: equal distances resolve to the lower index
    order = np.argsort(d2, axis=1, kind="stable")[:, :kk]
    edges = [(i, int(j)) for i in range(n) for j in order[i]]
    return Adjacency(n, edges)


def normalized_adjacency(adj: Adjacency) -> Tensor:
    """Dense D^{-1/2} (A + I) D^{-1/2} with D the row sums of A + I.

    The self-loop guarantees every degree is >= 1, so the operator is
    always defined; it is symmetric with entries in [0, 1].
    """
    a_tilde = adj.dense()
    np.fill_diagonal(a_tilde, 1.0)
    d_inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    norm = d_inv_sqrt[:, None] * a_tilde * d_inv_sqrt[None, :]
    return Tensor(norm)


@dataclass
class WsiGraph:
    """One slide as a graph: coordinates, both feature families, topology."""

    slide_id: str
    coords: np.ndarray           # n x 2 patch centers
    feat_a: Tensor               # n x dim_a (1024 from files)
    feat_b: Tensor               # n x dim_b (768 from files)
    adj: Adjacency
    norm_adj: Tensor
    label: int | None = None
    patch_ids: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        if self.patch_ids is None:
            self.patch_ids = np.arange(self.n, dtype=np.int64)

    @property
    def n(self) -> int:
        return self.adj.n


def build_wsi_graph(records, k: int, label: int | None = None,
                    slide_id: str = "") -> WsiGraph:
    """Assemble a WsiGraph from patch records, preserving record order."""
    if not records:
        raise ParameterError("cannot build a graph from zero patches")
    coords = np.array([(r.x, r.y) for r in records])
    feat_a = Tensor(np.vstack([r.feat_a for r in records]))
    feat_b = Tensor(np.vstack([r.feat_b for r in records]))
    ids = np.array([r.patch_id for r in records], dtype=np.int64)
    adj = knn_graph(coords, k)
    return WsiGraph(slide_id=slide_id, coords=coords, feat_a=feat_a,
                    feat_b=feat_b, adj=adj, norm_adj=normalized_adjacency(adj),
                    label=label, patch_ids=ids)


def export_graph_csv(g: WsiGraph, edges_path: str | Path,
                     nodes_path: str | Path) -> None:
    """Debug dump: edge list (src,dst) and node coordinates, for plotting."""
    with open(edges_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["src", "dst"])
        for i, j in g.adj.edges:
            if i < j:
                w.writerow([i, j])
    with open(nodes_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["patch_id", "x", "y"])
        for pid, (x, y) in zip(g.patch_ids, g.coords):
            w.writerow([int(pid), repr(float(x)), repr(float(y))])
