"""Graph-based slide-level STAS prediction toolkit.

Builds spatial KNN graphs over whole-slide-image patch features, trains a
Siamese graph encoder with tied post-projection weights, evaluates with
five-fold cross-validation, and exports per-patch contribution heatmaps.
"""

from .data import (Dataset, FoldSplit, PatchRecord, SlideEntry, SynthConfig,
                   convert_label_listing, load_manifest, load_slide, load_truth,
                   stratified_kfold, synth_dataset, write_manifest, write_slide)
from .errors import (CheckpointError, DataError, FormatError, MetricError,
                     ParameterError, ShapeError, StratificationError,
                     TrainingError, ValidationError, VernError)
from .graph import (Adjacency, WsiGraph, build_wsi_graph, export_graph_csv,
                    knn_graph, normalized_adjacency)
from .layers import (GcnParams, MlpParams, SageParams, gcn_forward,
                     glorot_uniform, mlp_forward, sage_forward)
from .metrics import (EvalReport, build_report, confusion_metrics, pr_auc,
                      roc_auc, write_report)
from .model import (VernOutput, VernParams, contribution_scores, encoder_forward,
                    init_params, load_checkpoint, save_checkpoint, vern_forward)
from .tensor import (Tape, Tensor, add, backward, concat_cols, dropout, matmul,
                     mean_rows, relu, row_l2_normalize, scale, sigmoid, sum_all)
from .train import (CvResult, FoldResult, RmsState, TrainConfig, bce_loss,
                    load_graphs, rmsprop_step, run_cv, summarize_reports,
                    train_fold)

__version__ = "0.1.0"
