"""Binary-classification metrics: confusion scalars, ROC and PR curves.

AUROC is the rank statistic P(score_pos > score_neg) + 0.5 P(tie); the
emitted ROC curve's trapezoidal area equals it. AUPRC uses the step-wise
precision-at-recall-increment summation over descending score thresholds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import MetricError, ParameterError

METRIC_NAMES = ("accuracy", "precision", "recall", "f1", "specificity",
                "auroc", "auprc")

CONVENTIONS = {
    "threshold_rule": "predicted positive iff prob >= threshold",
    "roc_area": "trapezoidal over tie-grouped thresholds; equals the rank "
                "statistic with half credit for ties",
    "pr_area": "step-wise sum of precision at each recall increment over "
               "descending score thresholds",
    "zero_denominators": "precision, recall, specificity and f1 fall back to 0",
}


def _check_scores_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ParameterError(f"{s.size} scores vs {y.size} labels")
    if s.size == 0:
        raise ParameterError("empty score list")
    if not np.all(np.isfinite(s)):
        raise ParameterError("non-finite scores")
    if not np.all(np.isin(y, (0, 1))):
        raise ParameterError("labels must be 0 or 1")
    return s, y.astype(np.int64)


def roc_auc(scores, labels) -> tuple[float, list[tuple[float, float]]]:
    """AUROC via ranks, plus the (FPR, TPR) curve from (0,0) to (1,1)."""
    s, y = _check_scores_labels(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC needs at least one positive and one negative")
    ranks = rankdata(s)  # average rank on ties -> half credit
    auc = (ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    order = np.argsort(-s, kind="stable")
    points = [(0.0, 0.0)]
    tp = fp = 0
    for idx, i in enumerate(order):
        if y[i] == 1:
            tp += 1
        else:
            fp += 1
        last_of_tie = idx == s.size - 1 or s[order[idx + 1]] != s[i]
        if last_of_tie:
            points.append((fp / n_neg, tp / n_pos))
    return float(auc), points


def pr_auc(scores, labels) -> tuple[float, list[tuple[float, float]]]:
    """AUPRC plus the (recall, precision) curve, starting from (0, 1)."""
    s, y = _check_scores_labels(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricError("AUPRC needs at least one positive")
    order = np.argsort(-s, kind="stable")
    points = [(0.0, 1.0)]
    area = 0.0
    tp = fp = 0
    prev_recall = 0.0
    for idx, i in enumerate(order):
        if y[i] == 1:
            tp += 1
        else:
            fp += 1
        last_of_tie = idx == s.size - 1 or s[order[idx + 1]] != s[i]
        if last_of_tie:
            precision = tp / (tp + fp)
            recall = tp / n_pos
            points.append((recall, precision))
            area += (recall - prev_recall) * precision
            prev_recall = recall
    return float(area), points


@dataclass
class EvalReport:
    """Confusion counts, the six scalar metrics, and both curves.

    ``auroc``/``auprc`` are None when undefined (single-class score sets).
    """

    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    specificity: float
    auroc: float | None
    auprc: float | None
    roc_points: list[tuple[float, float]] = field(default_factory=list)
    pr_points: list[tuple[float, float]] = field(default_factory=list)
    threshold: float = 0.5

    def scalars(self) -> dict[str, float | None]:
        return {name: getattr(self, name) for name in METRIC_NAMES}

    def to_dict(self) -> dict:
        return {
            "confusion": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
            "metrics": {k: v for k, v in self.scalars().items()},
            "threshold": self.threshold,
            "roc_points": [list(p) for p in self.roc_points],
            "pr_points": [list(p) for p in self.pr_points],
            "conventions": CONVENTIONS,
        }


def confusion_metrics(scores, labels, threshold: float = 0.5) -> EvalReport:
    """Scalar block at a threshold. Zero denominators follow the documented
    fallbacks, so this never raises on degenerate inputs."""
    s, y = _check_scores_labels(scores, labels)
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    tn = int(np.sum(~pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    n = tp + fp + tn + fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    specificity = tn / (tn + fp) if tn + fp else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalReport(tp=tp, fp=fp, tn=tn, fn=fn,
                      accuracy=(tp + tn) / n, precision=precision, recall=recall,
                      f1=f1, specificity=specificity, auroc=None, auprc=None,
                      threshold=threshold)


def build_report(scores, labels, threshold: float = 0.5) -> EvalReport:
    """Full report; curve areas are left undefined when the label mix
    cannot support them."""
    report = confusion_metrics(scores, labels, threshold)
    try:
        report.auroc, report.roc_points = roc_auc(scores, labels)
    except MetricError:
        pass
    try:
        report.auprc, report.pr_points = pr_auc(scores, labels)
    except MetricError:
        pass
    return report


def write_report(report: EvalReport, path: str | Path) -> None:
    payload = report.to_dict()
    payload["metrics"] = {k: ("undefined" if v is None else v)
                          for k, v in payload["metrics"].items()}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=1)
        f.write("\n")
