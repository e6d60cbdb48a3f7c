"""The feature-interactive Siamese graph encoder.

Two symmetric per-branch encoders share their SAGE and MLP stages (the
branch-specific graph convolutions cannot be tied because the two feature
families have different widths). The 768-wide branch carries a learned skip
projection of its raw input. Per-node embeddings are fused by elementwise
mean, mean-pooled over nodes, and classified by a single linear head; the
same head decomposes the logit into per-patch contribution scores.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import CheckpointError, ShapeError
from .graph import WsiGraph
from .layers import GcnParams, MlpParams, SageParams, glorot_uniform
from .layers import gcn_forward, mlp_forward, sage_forward
from .tensor import Tensor, add, dropout, matmul, mean_rows, row_l2_normalize, scale

CHECKPOINT_MAGIC = b"VERN"
CHECKPOINT_VERSION = 1

DEFAULT_HIDDEN = 512
DEFAULT_EMBED = 256
DEFAULT_DIM_A = 1024
DEFAULT_DIM_B = 768


@dataclass
class VernParams:
    """All learnable weights, with the shared/branch-specific partition.

    ``shared_sage`` and ``shared_mlp`` are single objects referenced by both
    branches, so each accumulates one gradient from the two encoder passes.
    """

    gcn_a: GcnParams        # dim_a -> hidden
    gcn_b: GcnParams        # dim_b -> hidden
    shared_sage: SageParams  # hidden -> hidden, tied across branches
    shared_mlp: MlpParams    # hidden -> embed, tied across branches
    skip_proj_b: Tensor      # dim_b -> embed
    clf_weight: Tensor       # embed x 1
    clf_bias: Tensor         # 1 x 1
    hidden: int
    embed: int
    dim_a: int
    dim_b: int
    seed: int

    def gcn_for(self, branch: str) -> GcnParams:
        return self.gcn_a if _norm_branch(branch) == "A" else self.gcn_b

    def sage_for(self, branch: str) -> SageParams:
        _norm_branch(branch)
        return self.shared_sage

    def mlp_for(self, branch: str) -> MlpParams:
        _norm_branch(branch)
        return self.shared_mlp

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """Canonical (name, tensor) order used by the optimizer and checkpoints."""
        return [
            ("gcn_a.weight", self.gcn_a.weight),
            ("gcn_a.bias", self.gcn_a.bias),
            ("gcn_b.weight", self.gcn_b.weight),
            ("gcn_b.bias", self.gcn_b.bias),
            ("sage.weight", self.shared_sage.weight),
            ("sage.bias", self.shared_sage.bias),
            ("mlp.w1", self.shared_mlp.w1),
            ("mlp.b1", self.shared_mlp.b1),
            ("mlp.w2", self.shared_mlp.w2),
            ("mlp.b2", self.shared_mlp.b2),
            ("skip_proj_b", self.skip_proj_b),
            ("clf.weight", self.clf_weight),
            ("clf.bias", self.clf_bias),
        ]

    def copy(self) -> "VernParams":
        return VernParams(
            gcn_a=self.gcn_a.copy(), gcn_b=self.gcn_b.copy(),
            shared_sage=self.shared_sage.copy(), shared_mlp=self.shared_mlp.copy(),
            skip_proj_b=self.skip_proj_b.copy(),
            clf_weight=self.clf_weight.copy(), clf_bias=self.clf_bias.copy(),
            hidden=self.hidden, embed=self.embed,
            dim_a=self.dim_a, dim_b=self.dim_b, seed=self.seed)


def _norm_branch(branch: str) -> str:
    b = str(branch).upper()
    if b not in ("A", "B"):
        raise ShapeError(f"branch must be 'A' or 'B', got {branch!r}")
    return b


def init_params(hidden: int = DEFAULT_HIDDEN, embed: int = DEFAULT_EMBED,
                seed: int = 0, dim_a: int = DEFAULT_DIM_A,
                dim_b: int = DEFAULT_DIM_B) -> VernParams:
    """Seeded initialization; shared stages are constructed once."""
    if hidden < 1 or embed < 1:
        raise ShapeError(f"hidden and embed must be >= 1, got {hidden}, {embed}")
    rng = np.random.default_rng(seed)
    return VernParams(
        gcn_a=GcnParams.init(dim_a, hidden, rng),
        gcn_b=GcnParams.init(dim_b, hidden, rng),
        shared_sage=SageParams.init(hidden, hidden, rng),
        shared_mlp=MlpParams.init(hidden, hidden, embed, rng),
        skip_proj_b=Tensor(glorot_uniform(rng, dim_b, embed)),
        clf_weight=Tensor(glorot_uniform(rng, embed, 1)),
        clf_bias=Tensor(np.zeros((1, 1))),
        hidden=hidden, embed=embed, dim_a=dim_a, dim_b=dim_b, seed=seed)


@dataclass
class VernOutput:
    logit: float
    prob: float
    contributions: np.ndarray      # length n, min-max normalized to [0, 1]
    top_patches: list[int]         # <= 9 node indices, descending contribution
    logit_tensor: Tensor           # 1x1, tracked when the forward pass was taped


def encoder_forward(g: WsiGraph, x: Tensor, branch: str, p: VernParams,
                    mode: str, rng: np.random.Generator | None = None,
                    dropout_p: float = 0.2) -> Tensor:
    """One branch: GCN -> SAGE -> Dropout -> MLP (-> +skip, branch B) -> Rescale."""
    branch = _norm_branch(branch)
    want = p.dim_a if branch == "A" else p.dim_b
    if x.cols != want:
        raise ShapeError(f"branch {branch} expects {want}-dim features, got {x.cols}")
    h = gcn_forward(g.norm_adj, x, p.gcn_for(branch))
    h = sage_forward(g.adj, h, p.shared_sage)
    h = dropout(h, dropout_p, mode, rng)
    h = mlp_forward(h, p.shared_mlp)
    if branch == "B":
        h = add(h, matmul(x, p.skip_proj_b))
    return row_l2_normalize(h)


def contribution_scores(z_a: Tensor, z_b: Tensor, clf_weight: Tensor) -> np.ndarray:
    """Per-node share of the logit through each encoder, averaged, then
    min-max normalized to [0, 1]. A constant profile maps to all 0.5."""
    if z_a.shape != z_b.shape:
        raise ShapeError(f"encoder outputs disagree: {z_a.shape} vs {z_b.shape}")
    raw = ((z_a.data @ clf_weight.data) + (z_b.data @ clf_weight.data)).ravel() / 2.0
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.full(raw.shape, 0.5)
    return (raw - lo) / (hi - lo)


def top_contributors(scores: np.ndarray, limit: int = 9) -> list[int]:
    """Indices of the highest scores, descending, ties by lower index."""
    order = np.argsort(-scores, kind="stable")
    return [int(i) for i in order[:limit]]


def vern_forward(g: WsiGraph, p: VernParams, mode: str,
                 rng: np.random.Generator | None = None,
                 dropout_p: float = 0.2) -> VernOutput:
    """Full model: both encoders, elementwise-mean fusion, mean-pool readout,
    linear head, and per-patch contribution scores."""
    z_a = encoder_forward(g, g.feat_a, "A", p, mode, rng, dropout_p)
    z_b = encoder_forward(g, g.feat_b, "B", p, mode, rng, dropout_p)
    fused = scale(add(z_a, z_b), 0.5)
    pooled = mean_rows(fused)
    logit_t = add(matmul(pooled, p.clf_weight), p.clf_bias)
    logit = logit_t.item()
    contrib = contribution_scores(z_a, z_b, p.clf_weight)
    return VernOutput(logit=logit, prob=float(expit(logit)),
                      contributions=contrib,
                      top_patches=top_contributors(contrib),
                      logit_tensor=logit_t)


def save_checkpoint(p: VernParams, path: str | Path) -> None:
    """Binary checkpoint: magic, version, JSON header, then each named
    parameter as (name, rows, cols, f64 row-major payload)."""
    meta = {"dim_a": p.dim_a, "dim_b": p.dim_b, "embed": p.embed,
            "hidden": p.hidden, "seed": p.seed}
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for name, t in p.named_parameters():
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<II", t.rows, t.cols))
            f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path, hidden: int | None = None,
                    embed: int | None = None, dim_a: int | None = None,
                    dim_b: int | None = None) -> VernParams:
    """Read a checkpoint; optional expectations are verified against the
    header and a mismatch raises CheckpointError."""
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    version, meta_len = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 12
    try:
        meta = json.loads(raw[off:off + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    off += meta_len
    for key, want in (("hidden", hidden), ("embed", embed),
                      ("dim_a", dim_a), ("dim_b", dim_b)):
        if want is not None and meta.get(key) != want:
            raise CheckpointError(
                f"{path}: {key}={meta.get(key)} but caller expects {want}")

    arrays: dict[str, np.ndarray] = {}
    try:
        while off < len(raw):
            (name_len,) = struct.unpack_from("<I", raw, off)
            off += 4
            name = raw[off:off + name_len].decode("utf-8")
            off += name_len
            rows, cols = struct.unpack_from("<II", raw, off)
            off += 8
            count = rows * cols
            arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off)
            if arr.size != count:
                raise CheckpointError(f"{path}: truncated payload for {name!r}")
            off += count * 8
            if not np.all(np.isfinite(arr)):
                raise CheckpointError(f"{path}: non-finite values in {name!r}")
            arrays[name] = arr.reshape(rows, cols).copy()
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt ({exc})") from exc

    p = init_params(hidden=meta["hidden"], embed=meta["embed"], seed=meta["seed"],
                    dim_a=meta["dim_a"], dim_b=meta["dim_b"])
    expected = [name for name, _ in p.named_parameters()]
    if sorted(arrays) != sorted(expected):
        raise CheckpointError(f"{path}: parameter set mismatch")
    for name, t in p.named_parameters():
        if arrays[name].shape != t.shape:
            raise CheckpointError(
                f"{path}: {name} has shape {arrays[name].shape}, expected {t.shape}")
        t.data = arrays[name]
    return p
