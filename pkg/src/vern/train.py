"""Loss, RMSprop, the per-fold training loop, and five-fold cross-validation.

Batch size is fixed at 1: graphs have varying node counts, so every step is
one slide's forward/backward on a fresh tape. Training is bit-deterministic
given (seed, dataset, config) on a single thread.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .data import Dataset, FoldSplit, load_slide, stratified_kfold
from .errors import MetricError, ParameterError, ShapeError, TrainingError
from .graph import WsiGraph, build_wsi_graph
from .metrics import EvalReport, METRIC_NAMES, build_report, roc_auc
from .model import VernParams, init_params, vern_forward
from .tensor import Tape, Tensor, backward

DEFAULT_KNN_K = 9


@dataclass
class TrainConfig:
    lr: float = 0.001
    alpha: float = 0.9          # RMSprop squared-gradient smoothing
    epochs: int = 200
    batch_size: int = 1         # fixed: one graph per step
    dropout_p: float = 0.2
    seed: int = 0
    eps_rms: float = 1e-8
    pos_weight: float = 1.0     # optional positive-class loss weight

    def __post_init__(self):
        if not (math.isfinite(self.lr) and self.lr > 0):
            raise ParameterError(f"lr must be > 0, got {self.lr}")
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size != 1:
            raise ParameterError("batch_size is fixed at 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ParameterError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if not (math.isfinite(self.eps_rms) and self.eps_rms > 0):
            raise ParameterError(f"eps_rms must be > 0, got {self.eps_rms}")
        if not (math.isfinite(self.pos_weight) and self.pos_weight > 0):
            raise ParameterError(f"pos_weight must be > 0, got {self.pos_weight}")


@dataclass
class RmsState:
    """Per-parameter squared-gradient accumulators, zero-initialized."""

    acc: dict[str, np.ndarray]

    @classmethod
    def for_params(cls, params: VernParams) -> "RmsState":
        return cls({name: np.zeros_like(t.data)
                    for name, t in params.named_parameters()})


def bce_loss(logit: Tensor, label: int, pos_weight: float = 1.0) -> Tensor:
    """Binary cross-entropy on the logit, in the overflow-safe softplus form.

    d(loss)/d(logit) = weight * (sigmoid(logit) - label).
    """
    if logit.shape != (1, 1):
        raise ShapeError(f"bce_loss expects a 1x1 logit, got {logit.shape}")
    if label not in (0, 1):
        raise ParameterError(f"label must be 0 or 1, got {label!r}")
    z = logit.data[0, 0]
    w = pos_weight if label == 1 else 1.0
    value = w * np.logaddexp(0.0, -z if label == 1 else z)
    if logit.tape is None:
        return Tensor([[value]])
    local = w * (expit(z) - label)
    return logit.tape.record(np.array([[value]]), [logit],
                             lambda g: (g * local,))


def rmsprop_step(params: VernParams, grads: dict[str, np.ndarray],
                 state: RmsState, cfg: TrainConfig) -> None:
    """v <- alpha v + (1-alpha) g^2; theta <- theta - lr g / (sqrt(v) + eps)."""
    for name, t in params.named_parameters():
        g = grads[name]
        if g.shape != t.shape:
            raise ShapeError(f"{name}: gradient {g.shape} vs parameter {t.shape}")
        v = state.acc[name]
        v *= cfg.alpha
        v += (1.0 - cfg.alpha) * g * g
        t.data -= cfg.lr * g / (np.sqrt(v) + cfg.eps_rms)


@dataclass
class FoldResult:
    params: VernParams
    log: list[tuple[int, float, float | None]]  # (epoch, train_loss, val_auroc)
    best_epoch: int | None
    best_val_auroc: float | None


def _scores_and_labels(graphs: list[WsiGraph], params: VernParams):
    scores = [vern_forward(g, params, "eval").prob for g in graphs]
    labels = [g.label for g in graphs]
    return scores, labels


def train_fold(train_graphs: list[WsiGraph], val_graphs: list[WsiGraph],
               cfg: TrainConfig, init: VernParams | None = None,
               hidden: int = 512, embed: int = 256,
               fold_index: int = 0) -> FoldResult:
    """Train on one fold's training slides, retaining the checkpoint with the
    best validation AUROC (ties resolve to the earlier epoch)."""
    train_labels = {g.label for g in train_graphs}
    if train_labels != {0, 1}:
        raise TrainingError(f"training set labels are {sorted(train_labels)}; "
                            "both classes are required")
    if init is not None:
        params = init.copy()
    else:
        params = init_params(hidden=hidden, embed=embed, seed=cfg.seed,
                             dim_a=train_graphs[0].feat_a.cols,
                             dim_b=train_graphs[0].feat_b.cols)
    state = RmsState.for_params(params)
    shuffle_rng = np.random.default_rng([cfg.seed, fold_index, 17])
    dropout_rng = np.random.default_rng([cfg.seed, fold_index, 23])

    best_params = params.copy()
    best_auroc: float | None = None
    best_epoch: int | None = None
    log: list[tuple[int, float, float | None]] = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(train_graphs))
        losses = []
        for idx in order:
            g = train_graphs[idx]
            tape = Tape()
            tape.watch_all([t for _, t in params.named_parameters()])
            out = vern_forward(g, params, "train", rng=dropout_rng,
                               dropout_p=cfg.dropout_p)
            loss = bce_loss(out.logit_tensor, g.label, cfg.pos_weight)
            grad_map = backward(tape, loss)
            grads = {name: grad_map[t].data
                     for name, t in params.named_parameters()}
            rmsprop_step(params, grads, state, cfg)
            losses.append(loss.item())

        scores, labels = _scores_and_labels(val_graphs, params)
        try:
            val_auroc = roc_auc(scores, labels)[0]
        except (MetricError, ParameterError):
            val_auroc = None
        log.append((epoch, float(np.mean(losses)), val_auroc))
        if val_auroc is not None and (best_auroc is None or val_auroc > best_auroc):
            best_params = params.copy()
            best_auroc = val_auroc
            best_epoch = epoch
    return FoldResult(params=best_params, log=log,
                      best_epoch=best_epoch, best_val_auroc=best_auroc)


def load_graphs(ds: Dataset, knn_k: int = DEFAULT_KNN_K) -> list[WsiGraph]:
    return [build_wsi_graph(load_slide(e), knn_k, label=e.label,
                            slide_id=e.slide_id) for e in ds.entries]


@dataclass
class CvResult:
    split: FoldSplit
    folds: list[FoldResult]
    reports: list[EvalReport]
    metric_mean: dict[str, float] = field(default_factory=dict)
    metric_std: dict[str, float] = field(default_factory=dict)
    pooled_confusion: dict[str, int] = field(default_factory=dict)


def summarize_reports(reports: list[EvalReport]) -> tuple[dict, dict, dict]:
    """Mean and sample standard deviation per metric, plus pooled confusion."""
    mean: dict[str, float] = {}
    std: dict[str, float] = {}
    for name in METRIC_NAMES:
        vals = [r.scalars()[name] for r in reports if r.scalars()[name] is not None]
        if vals:
            mean[name] = float(np.mean(vals))
            std[name] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    pooled = {key: sum(getattr(r, key) for r in reports)
              for key in ("tp", "fp", "tn", "fn")}
    return mean, std, pooled


def run_cv(ds: Dataset, cfg: TrainConfig, folds: int = 5,
           hidden: int = 512, embed: int = 256,
           knn_k: int = DEFAULT_KNN_K, threshold: float = 0.5) -> CvResult:
    """Stratified k-fold cross-validation: k trained checkpoints, one
    EvalReport per held-out fold, and mean +/- std across folds."""
    split = stratified_kfold(ds, folds, cfg.seed)
    graphs = {g.slide_id: g for g in load_graphs(ds, knn_k)}
    fold_results: list[FoldResult] = []
    reports: list[EvalReport] = []
    for fold in range(folds):
        train = [graphs[s] for s in split.train_ids(fold)]
        val = [graphs[s] for s in split.val_ids(fold)]
        result = train_fold(train, val, cfg, hidden=hidden, embed=embed,
                            fold_index=fold)
        scores, labels = _scores_and_labels(val, result.params)
        reports.append(build_report(scores, labels, threshold))
        fold_results.append(result)
    mean, std, pooled = summarize_reports(reports)
    return CvResult(split=split, folds=fold_results, reports=reports,
                    metric_mean=mean, metric_std=std, pooled_confusion=pooled)
