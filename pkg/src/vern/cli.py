"""Command-line surface: synth, train, eval, predict, heatmap.

Exit codes: 0 ok, 2 usage, 3 I/O, 4 data/stratification, 5 checkpoint
incompatibility. The default output directory can come from $VERN_OUT.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from .data import Dataset, SynthConfig, load_manifest, load_slide, synth_dataset
from .errors import (CheckpointError, DataError, FormatError, MetricError,
                     ParameterError, StratificationError, TrainingError,
                     ValidationError)
from .graph import WsiGraph, build_wsi_graph
from .metrics import build_report, write_report
from .model import VernParams, load_checkpoint, save_checkpoint, vern_forward
from .train import DEFAULT_KNN_K, TrainConfig, load_graphs, run_cv

PREDICT_THRESHOLD = 0.5


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("VERN_OUT")
    if not out:
        raise ParameterError("no output directory: pass --out or set VERN_OUT")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _check_dims(params: VernParams, graphs: list[WsiGraph]) -> None:
    for g in graphs:
        if g.feat_a.cols != params.dim_a or g.feat_b.cols != params.dim_b:
            raise CheckpointError(
                f"slide {g.slide_id!r} has feature dims "
                f"({g.feat_a.cols}, {g.feat_b.cols}) but checkpoint expects "
                f"({params.dim_a}, {params.dim_b})")


def _score_all(graphs: list[WsiGraph], params: VernParams) -> list[float]:
    _check_dims(params, graphs)
    return [vern_forward(g, params, "eval").prob for g in graphs]


def cmd_synth(args) -> int:
    out = _out_dir(args)
    cfg = SynthConfig(n_slides=args.slides, patches_min=args.min_patches,
                      patches_max=args.max_patches,
                      signal_strength=args.signal, seed=args.seed)
    ds = synth_dataset(cfg, out)
    counts = ds.class_counts()
    patches = sum(e.patch_count for e in ds.entries)
    print(f"wrote {len(ds)} slides ({counts.get(1, 0)} positive, "
          f"{counts.get(0, 0)} negative), {patches} patches -> {out}")
    return 0


def cmd_train(args) -> int:
    out = _out_dir(args)
    ds = load_manifest(args.manifest)
    cfg = TrainConfig(lr=args.lr, alpha=args.alpha, epochs=args.epochs,
                      seed=args.seed, pos_weight=args.pos_weight)
    result = run_cv(ds, cfg, folds=args.folds, hidden=args.hidden,
                    embed=args.embed, knn_k=args.knn)

    for fold, fr in enumerate(result.folds):
        save_checkpoint(fr.params, out / f"fold{fold}.ckpt")
    with open(out / "training_log.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["fold", "epoch", "train_loss", "val_auroc"])
        for fold, fr in enumerate(result.folds):
            for epoch, loss, auroc in fr.log:
                w.writerow([fold, epoch, repr(loss),
                            "" if auroc is None else repr(auroc)])
    summary = {
        "config": {"lr": cfg.lr, "alpha": cfg.alpha, "epochs": cfg.epochs,
                   "seed": cfg.seed, "folds": args.folds, "hidden": args.hidden,
                   "embed": args.embed, "knn": args.knn,
                   "pos_weight": cfg.pos_weight},
        "folds": [{"fold": fold,
                   "best_epoch": fr.best_epoch,
                   "best_val_auroc": fr.best_val_auroc,
                   "report": result.reports[fold].to_dict()}
                  for fold, fr in enumerate(result.folds)],
        "metric_mean": result.metric_mean,
        "metric_std": result.metric_std,
        "pooled_confusion": result.pooled_confusion,
    }
    with open(out / "cv_report.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, sort_keys=True, indent=1)
        f.write("\n")
    shown = ", ".join(f"{k}={result.metric_mean[k]:.4f}+-{result.metric_std[k]:.4f}"
                      for k in sorted(result.metric_mean))
    print(f"trained {args.folds} folds -> {out}")
    print(f"cv mean: {shown}")
    return 0


def _write_scores_csv(path: Path, ds: Dataset, scores: list[float]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["slide_id", "prob", "label"])
        for entry, prob in zip(ds.entries, scores):
            w.writerow([entry.slide_id, repr(prob),
                        "" if entry.label is None else entry.label])


def cmd_eval(args) -> int:
    out = _out_dir(args)
    params = load_checkpoint(args.checkpoint)
    ds = load_manifest(args.manifest)
    if any(e.label is None for e in ds.entries):
        raise ValidationError("eval requires labels for every slide")
    graphs = load_graphs(ds, knn_k=args.knn)
    scores = _score_all(graphs, params)
    labels = [e.label for e in ds.entries]
    report = build_report(scores, labels, args.threshold)
    write_report(report, out / "eval_report.json")
    _write_scores_csv(out / "scores.csv", ds, scores)

    known_kinds = [k for k in ("frozen", "paraffin")
                   if any(e.section_kind == k for e in ds.entries)]
    if known_kinds:
        for kind in known_kinds:
            idx = [i for i, e in enumerate(ds.entries) if e.section_kind == kind]
            sub = build_report([scores[i] for i in idx], [labels[i] for i in idx],
                               args.threshold)
            write_report(sub, out / f"eval_report_{kind}.json")
    auroc = "undefined" if report.auroc is None else f"{report.auroc:.4f}"
    print(f"evaluated {len(ds)} slides: accuracy={report.accuracy:.4f} "
          f"auroc={auroc} -> {out}")
    return 0


def cmd_predict(args) -> int:
    out = _out_dir(args)
    params = load_checkpoint(args.checkpoint)
    ds = load_manifest(args.manifest)
    graphs = load_graphs(ds, knn_k=args.knn)
    scores = _score_all(graphs, params)
    predicted = [int(p >= PREDICT_THRESHOLD) for p in scores]
    with open(out / "predictions.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["slide_id", "prob", "predicted_label"])
        for entry, prob, pred in zip(ds.entries, scores, predicted):
            w.writerow([entry.slide_id, repr(prob), pred])
    if ds.has_patients():
        # a patient is flagged iff any of their slides is predicted positive
        flags: dict[str, int] = {}
        for entry, pred in zip(ds.entries, predicted):
            pid = entry.patient_id
            if pid:
                flags[pid] = max(flags.get(pid, 0), pred)
        with open(out / "patients.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["patient_id", "patient_flag"])
            for pid, flag in flags.items():
                w.writerow([pid, flag])
        print(f"predicted {len(ds)} slides, {len(flags)} patients -> {out}")
    else:
        print(f"predicted {len(ds)} slides -> {out}")
    return 0


def render_heatmap_png(coords, contributions, path: str | Path) -> None:
    """Fixed-radius discs at patch centers, purple (0) to red (1)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.colors import LinearSegmentedColormap

    cmap = LinearSegmentedColormap.from_list("contribution", ["purple", "red"])
    fig, ax = plt.subplots(figsize=(6.4, 6.4))
    sc = ax.scatter(coords[:, 0], coords[:, 1], c=contributions, cmap=cmap,
                    vmin=0.0, vmax=1.0, s=140, edgecolors="none")
    ax.set_aspect("equal")
    ax.invert_yaxis()  # image convention: y grows downward
    ax.set_xlabel("x (px)")
    ax.set_ylabel("y (px)")
    fig.colorbar(sc, ax=ax, label="contribution")
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def cmd_heatmap(args) -> int:
    out = _out_dir(args)
    params = load_checkpoint(args.checkpoint)
    ds = load_manifest(args.manifest)
    by_id = {e.slide_id: e for e in ds.entries}
    if args.slide_id not in by_id:
        raise ParameterError(f"slide {args.slide_id!r} not in manifest")
    entry = by_id[args.slide_id]
    records = load_slide(entry)
    g = build_wsi_graph(records, args.knn, label=entry.label,
                        slide_id=entry.slide_id)
    _check_dims(params, [g])
    result = vern_forward(g, params, "eval")

    csv_path = out / f"{entry.slide_id}_contributions.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["patch_id", "x", "y", "contribution"])
        for i, r in enumerate(records):
            w.writerow([r.patch_id, repr(r.x), repr(r.y),
                        repr(float(result.contributions[i]))])
    top_ids = [int(g.patch_ids[i]) for i in result.top_patches]
    with open(out / f"{entry.slide_id}_top9.json", "w", encoding="utf-8") as f:
        json.dump({"slide_id": entry.slide_id, "prob": result.prob,
                   "top_patches": top_ids}, f, sort_keys=True, indent=1)
        f.write("\n")
    if args.png:
        render_heatmap_png(g.coords, result.contributions,
                           out / f"{entry.slide_id}.png")
    print(f"heatmap for {entry.slide_id}: prob={result.prob:.4f}, "
          f"top patches {top_ids} -> {out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vern",
        description="Slide-level STAS prediction from patch-feature graphs")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="generate a synthetic planted-signal dataset")
    p.add_argument("--out", default=None)
    p.add_argument("--slides", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--signal", type=float, default=2.0)
    p.add_argument("--min-patches", type=int, default=12)
    p.add_argument("--max-patches", type=int, default=28)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="five-fold cross-validated training")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=512)
    p.add_argument("--embed", type=int, default=256)
    p.add_argument("--knn", type=int, default=DEFAULT_KNN_K)
    p.add_argument("--pos-weight", type=float, default=1.0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a labeled manifest with a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--knn", type=int, default=DEFAULT_KNN_K)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="per-slide probabilities and patient flags")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--knn", type=int, default=DEFAULT_KNN_K)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("heatmap", help="per-patch contribution export for one slide")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--slide-id", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--png", action="store_true")
    p.add_argument("--knn", type=int, default=DEFAULT_KNN_K)
    p.set_defaults(func=cmd_heatmap)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except (DataError, ValidationError, FormatError, StratificationError,
            TrainingError, MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
