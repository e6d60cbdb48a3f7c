"""Message-passing and feed-forward building blocks.

The graph convolution applies the normalized adjacency before a linear map
and ReLU; the SAGE layer concatenates each node with the mean of its
neighbors. Biases are zero-initialized so both layers reduce to their
bias-free textbook forms at init.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .graph import Adjacency
from .tensor import Tensor, add, concat_cols, matmul, relu


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform init in +/- sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class GcnParams:
    weight: Tensor  # d_in x d_out
    bias: Tensor    # 1 x d_out

    @classmethod
    def init(cls, d_in: int, d_out: int, rng: np.random.Generator) -> "GcnParams":
        return cls(weight=Tensor(glorot_uniform(rng, d_in, d_out)),
                   bias=Tensor(np.zeros((1, d_out))))

    def copy(self) -> "GcnParams":
        return GcnParams(self.weight.copy(), self.bias.copy())


@dataclass
class SageParams:
    weight: Tensor  # (2 * d_in) x d_out, applied to [self | neighbor mean]
    bias: Tensor    # 1 x d_out

    @classmethod
    def init(cls, d_in: int, d_out: int, rng: np.random.Generator) -> "SageParams":
        return cls(weight=Tensor(glorot_uniform(rng, 2 * d_in, d_out)),
                   bias=Tensor(np.zeros((1, d_out))))

    def copy(self) -> "SageParams":
        return SageParams(self.weight.copy(), self.bias.copy())


@dataclass
class MlpParams:
    w1: Tensor  # d_in x d_hidden
    b1: Tensor
    w2: Tensor  # d_hidden x d_out
    b2: Tensor

    @classmethod
    def init(cls, d_in: int, d_hidden: int, d_out: int,
             rng: np.random.Generator) -> "MlpParams":
        return cls(w1=Tensor(glorot_uniform(rng, d_in, d_hidden)),
                   b1=Tensor(np.zeros((1, d_hidden))),
                   w2=Tensor(glorot_uniform(rng, d_hidden, d_out)),
                   b2=Tensor(np.zeros((1, d_out))))

    def copy(self) -> "MlpParams":
        return MlpParams(self.w1.copy(), self.b1.copy(),
                         self.w2.copy(), self.b2.copy())


def gcn_forward(norm_adj: Tensor, h: Tensor, p: GcnParams) -> Tensor:
    """ReLU(norm_adj . h . W + bias)."""
    if norm_adj.rows != norm_adj.cols:
        raise ShapeError(f"norm_adj must be square, got {norm_adj.shape}")
    if norm_adj.cols != h.rows:
        raise ShapeError(f"norm_adj {norm_adj.shape} does not match h {h.shape}")
    if h.cols != p.weight.rows:
        raise ShapeError(f"gcn weight {p.weight.shape} does not accept h {h.shape}")
    return relu(add(matmul(norm_adj, matmul(h, p.weight)), p.bias))


def sage_forward(adj: Adjacency, h: Tensor, p: SageParams) -> Tensor:
    """ReLU([h_v | mean of neighbor h_u] . W + bias), per node.

    Neighborhoods exclude the node itself; an empty neighborhood
    aggregates to the zero vector.
    """
    if adj.n != h.rows:
        raise ShapeError(f"adjacency has {adj.n} nodes but h is {h.shape}")
    if p.weight.rows != 2 * h.cols:
        raise ShapeError(
            f"sage weight {p.weight.shape} does not accept concat width {2 * h.cols}")
    agg = matmul(Tensor(adj.neighbor_mean_matrix()), h)
    return relu(add(matmul(concat_cols(h, agg), p.weight), p.bias))


def mlp_forward(h: Tensor, p: MlpParams) -> Tensor:
    """ReLU(h . W1 + b1) . W2 + b2, row-wise."""
    if h.cols != p.w1.rows:
        raise ShapeError(f"mlp w1 {p.w1.shape} does not accept h {h.shape}")
    hidden = relu(add(matmul(h, p.w1), p.b1))
    return add(matmul(hidden, p.w2), p.b2)
