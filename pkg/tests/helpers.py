"""Shared fixtures-in-spirit: graph factories, finite-difference oracles,
and the kink-clearance guard used by gradient checks."""

from __future__ import annotations

import numpy as np

from vern import (Tensor, WsiGraph, bce_loss, init_params, knn_graph,
                  normalized_adjacency, vern_forward)


def make_graph(rng: np.random.Generator, n: int, dim_a: int, dim_b: int,
               k: int = 3, label: int = 1, slide_id: str = "t") -> WsiGraph:
    """Random graph with features bounded in [-2, 2]."""
    coords = rng.uniform(0.0, 100.0, (n, 2))
    adj = knn_graph(coords, k)
    return WsiGraph(slide_id=slide_id, coords=coords,
                    feat_a=Tensor(rng.uniform(-2.0, 2.0, (n, dim_a))),
                    feat_b=Tensor(rng.uniform(-2.0, 2.0, (n, dim_b))),
                    adj=adj, norm_adj=normalized_adjacency(adj), label=label)


def permute_graph(g: WsiGraph, perm: np.ndarray) -> WsiGraph:
    """Relabel nodes by ``perm``: new node i is old node perm[i]."""
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    from vern import Adjacency
    adj = Adjacency(g.n, [(int(inv[i]), int(inv[j])) for i, j in g.adj.edges])
    return WsiGraph(slide_id=g.slide_id, coords=g.coords[perm],
                    feat_a=Tensor(g.feat_a.data[perm]),
                    feat_b=Tensor(g.feat_b.data[perm]),
                    adj=adj, norm_adj=normalized_adjacency(adj),
                    label=g.label, patch_ids=g.patch_ids[perm])


def randomize_params(p, rng: np.random.Generator, scale: float = 0.5) -> None:
    for _, t in p.named_parameters():
        t.data = rng.uniform(-scale, scale, t.shape)


def kink_clearance(g: WsiGraph, p) -> float:
    """Distance of the eval-mode forward pass from its non-smooth points:
    min |ReLU pre-activation| across all stages, and min rescale-input row
    norm (weighted up, since the rescale kink is the steep one)."""
    vals = []
    norm_adj = g.norm_adj.data
    mean_mat = g.adj.neighbor_mean_matrix()
    for branch, x in (("A", g.feat_a.data), ("B", g.feat_b.data)):
        gcn = p.gcn_for(branch)
        pre = norm_adj @ (x @ gcn.weight.data) + gcn.bias.data
        vals.append(np.abs(pre).min())
        h = np.maximum(pre, 0.0)
        pre = np.hstack([h, mean_mat @ h]) @ p.shared_sage.weight.data \
            + p.shared_sage.bias.data
        vals.append(np.abs(pre).min())
        h = np.maximum(pre, 0.0)
        pre = h @ p.shared_mlp.w1.data + p.shared_mlp.b1.data
        vals.append(np.abs(pre).min())
        h4 = np.maximum(pre, 0.0) @ p.shared_mlp.w2.data + p.shared_mlp.b2.data
        if branch == "B":
            h4 = h4 + x @ p.skip_proj_b.data
        vals.append(np.linalg.norm(h4, axis=1).min() * 10.0)
    return float(min(vals))


def sample_smooth_model(seed: int, n_lo: int = 5, n_hi: int = 10,
                        dim_a: int = 6, dim_b: int = 4,
                        hidden: int = 5, embed: int = 3):
    """Random (graph, params, label) resampled until clear of ReLU/rescale
    kinks, so central differences are trustworthy."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(n_lo, n_hi + 1))
    g = make_graph(rng, n, dim_a, dim_b)
    p = init_params(hidden=hidden, embed=embed, seed=seed,
                    dim_a=dim_a, dim_b=dim_b)
    while True:
        randomize_params(p, rng)
        if kink_clearance(g, p) > 1e-3:
            break
    label = int(rng.integers(0, 2))
    return g, p, label


def model_loss(g: WsiGraph, p, label: int) -> float:
    out = vern_forward(g, p, "eval")
    return bce_loss(out.logit_tensor, label).item()


def fd_model_gradients(g: WsiGraph, p, label: int, eps: float = 1e-5):
    """Central finite differences of the eval-mode loss w.r.t. every
    parameter entry."""
    grads = {}
    for name, t in p.named_parameters():
        fd = np.zeros_like(t.data)
        for idx in np.ndindex(*t.shape):
            orig = t.data[idx]
            t.data[idx] = orig + eps
            hi = model_loss(g, p, label)
            t.data[idx] = orig - eps
            lo = model_loss(g, p, label)
            t.data[idx] = orig
            fd[idx] = (hi - lo) / (2.0 * eps)
        grads[name] = fd
    return grads


def fd_gradient(fn, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``fn(array)`` w.r.t. each entry."""
    out = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        orig = x[idx]
        x[idx] = orig + eps
        hi = fn(x)
        x[idx] = orig - eps
        lo = fn(x)
        x[idx] = orig
        out[idx] = (hi - lo) / (2.0 * eps)
    return out


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.max(np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)))
