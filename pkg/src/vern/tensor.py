"""Dense 2-D float64 matrices with a minimal reverse-mode gradient tape.

Everything the slide encoder trains through is expressed with the handful
of operations below. A Tape records one forward pass; ``backward`` replays
it once in reverse and returns gradients for every watched leaf. Tapes are
cheap and meant to be discarded after each training step (batch size is 1).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import DataError, ParameterError, ShapeError

Array = np.ndarray


def _as_matrix(data) -> Array:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"tensors are 2-D matrices, got ndim={arr.ndim}")
    return np.ascontiguousarray(arr)


def _check_finite(arr: Array, what: str) -> Array:
    if not np.all(np.isfinite(arr)):
        raise DataError(f"non-finite values in {what}")
    return arr


class Tensor:
    """A rows x cols float64 matrix, optionally tracked on a Tape.

    Construction validates finiteness, so any operation producing NaN/Inf
    fails loudly instead of propagating garbage.
    """

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: "Tape | None" = None, node: int | None = None):
        self.data = _check_finite(_as_matrix(data), "tensor")
        self.tape = tape
        self.node = node

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def copy(self) -> "Tensor":
        """Untracked deep copy."""
        return Tensor(self.data.copy())

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, c: float) -> "Tensor":
        return scale(self, c)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        tracked = "" if self.tape is None else f", node={self.node}"
        return f"Tensor({self.rows}x{self.cols}{tracked})"


class _Node:
    __slots__ = ("parents", "pullback")

    def __init__(self, parents: tuple[int, ...], pullback):
        self.parents = parents
        self.pullback = pullback


class Tape:
    """Append-only record of one forward pass.

    Node parents always precede their children, so a single reverse sweep
    visits each node exactly once. Pullbacks must return arrays the tape
    may own and mutate (copy when echoing an upstream gradient).
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._watched: list[Tensor] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def watch(self, t: Tensor) -> Tensor:
        """Register ``t`` as a leaf. Re-watching moves it onto this tape."""
        t.tape = self
        t.node = self._append((), None)
        self._watched.append(t)
        return t

    def watch_all(self, tensors: Sequence[Tensor]) -> None:
        for t in tensors:
            self.watch(t)

    def record(self, out_data: Array, parents: Sequence[Tensor],
               pullback: Callable[[Array], tuple[Array, ...]]) -> Tensor:
        """Create a tracked Tensor holding ``out_data``.

        ``pullback(grad)`` must return one gradient array per parent,
        in order.
        """
        ids = tuple(p.node for p in parents)
        out = Tensor(out_data)
        out.tape = self
        out.node = self._append(ids, pullback)
        return out

    def _append(self, parents: tuple[int, ...], pullback) -> int:
        self._nodes.append(_Node(parents, pullback))
        return len(self._nodes) - 1


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, Tensor]:
    """Reverse sweep from a 1x1 loss; returns {watched leaf: gradient}.

    Leaves the loss never touched get zero gradients.
    """
    if loss.tape is not tape or loss.node is None:
        raise ValueError("loss tensor is not recorded on this tape")
    if loss.shape != (1, 1):
        raise ShapeError(f"loss must be 1x1, got {loss.shape}")
    grads: list[Array | None] = [None] * len(tape._nodes)
    grads[loss.node] = np.ones((1, 1))
    for nid in range(loss.node, -1, -1):
        g = grads[nid]
        node = tape._nodes[nid]
        if g is None or node.pullback is None:
            continue
        for pid, pg in zip(node.parents, node.pullback(g)):
            if grads[pid] is None:
                grads[pid] = pg
            else:
                grads[pid] += pg
    out: dict[Tensor, Tensor] = {}
    for leaf in tape._watched:
        g = grads[leaf.node]
        out[leaf] = Tensor(np.zeros_like(leaf.data)) if g is None else Tensor(g)
    return out


def _tape_of(*tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ValueError("operands are tracked on different tapes")
    return tape


def _emit(out_data: Array, pairs, tape: Tape | None) -> Tensor:
    # pairs: [(tracked parent, grad_fn)] for tracked inputs only
    if tape is None or not pairs:
        return Tensor(out_data)
    parents = [t for t, _ in pairs]
    fns = [f for _, f in pairs]

    def pullback(g: Array) -> tuple[Array, ...]:
        return tuple(f(g) for f in fns)

    return tape.record(out_data, parents, pullback)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. Gradients: dA = G.B^T, dB = A^T.G."""
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dims disagree, {a.shape} x {b.shape}")
    out = a.data @ b.data
    tape = _tape_of(a, b)
    pairs = []
    if tape is not None:
        if a.tape is not None:
            pairs.append((a, lambda g: g @ b.data.T))
        if b.tape is not None:
            pairs.append((b, lambda g: a.data.T @ g))
    return _emit(out, pairs, tape)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; one operand may be a 1 x cols row vector (bias)."""
    if a.shape == b.shape:
        ga = lambda g: g.copy()
        gb = lambda g: g.copy()
    elif b.rows == 1 and b.cols == a.cols:
        ga = lambda g: g.copy()
        gb = lambda g: g.sum(axis=0, keepdims=True)
    elif a.rows == 1 and a.cols == b.cols:
        ga = lambda g: g.sum(axis=0, keepdims=True)
        gb = lambda g: g.copy()
    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} + {b.shape}")
    out = a.data + b.data
    tape = _tape_of(a, b)
    pairs = []
    if tape is not None:
        if a.tape is not None:
            pairs.append((a, ga))
        if b.tape is not None:
            pairs.append((b, gb))
    return _emit(out, pairs, tape)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply every entry by the constant ``c``."""
    c = float(c)
    if not np.isfinite(c):
        raise ParameterError("scale factor must be finite")
    tape = _tape_of(x)
    pairs = [(x, lambda g: g * c)] if tape is not None else []
    return _emit(x.data * c, pairs, tape)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, v). Subgradient at exactly 0 is 0."""
    out = np.maximum(x.data, 0.0)
    tape = _tape_of(x)
    pairs = []
    if tape is not None:
        mask = x.data > 0.0
        pairs.append((x, lambda g: g * mask))
    return _emit(out, pairs, tape)


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    tape = _tape_of(x)
    pairs = [(x, lambda g: g * out * (1.0 - out))] if tape is not None else []
    return _emit(out, pairs, tape)


def row_l2_normalize(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Divide each row by max(||row||_2, eps).

    Rows with norm >= eps come out unit length; near-zero rows are scaled
    by 1/eps instead of exploding.
    """
    if eps <= 0.0:
        raise ParameterError(f"eps must be > 0, got {eps}")
    norms = np.linalg.norm(x.data, axis=1, keepdims=True)
    denom = np.maximum(norms, eps)
    out = x.data / denom
    tape = _tape_of(x)
    pairs = []
    if tape is not None:
        on_norm_branch = norms >= eps

        def pull(g: Array) -> Array:
            dot = np.sum(g * out, axis=1, keepdims=True)
            norm_grad = (g - out * dot) / denom
            return np.where(on_norm_branch, norm_grad, g / eps)

        pairs.append((x, pull))
    return _emit(out, pairs, tape)


def dropout(x: Tensor, p: float, mode: str,
            rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero entries with probability p, scale survivors
    by 1/(1-p). Identity in eval mode or at p == 0 (no rng draw either way).
    """
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout p must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise ParameterError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ParameterError("train-mode dropout requires an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    tape = _tape_of(x)
    pairs = [(x, lambda g: g * keep)] if tape is not None else []
    return _emit(x.data * keep, pairs, tape)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Horizontal concatenation [a | b]."""
    if a.rows != b.rows:
        raise ShapeError(f"concat_cols: row counts disagree, {a.shape} vs {b.shape}")
    out = np.hstack([a.data, b.data])
    tape = _tape_of(a, b)
    pairs = []
    if tape is not None:
        k = a.cols
        if a.tape is not None:
            pairs.append((a, lambda g: g[:, :k].copy()))
        if b.tape is not None:
            pairs.append((b, lambda g: g[:, k:].copy()))
    return _emit(out, pairs, tape)


def mean_rows(x: Tensor) -> Tensor:
    """Column-wise mean over rows: (n x c) -> (1 x c). Graph readout."""
    n = x.rows
    out = x.data.mean(axis=0, keepdims=True)
    tape = _tape_of(x)
    pairs = [(x, lambda g: np.repeat(g / n, n, axis=0))] if tape is not None else []
    return _emit(out, pairs, tape)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all entries as a 1x1 tensor."""
    out = np.array([[x.data.sum()]])
    tape = _tape_of(x)
    pairs = [(x, lambda g: np.full(x.shape, g[0, 0]))] if tape is not None else []
    return _emit(out, pairs, tape)
