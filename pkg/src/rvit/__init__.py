"""Redundancy-aware vision transformers.

Spatially redundant imagery does not need every patch: this package selects
an informative subset of image patches (uniform random, diversity-based, or
threshold-adaptive), runs only those tokens through a transformer encoder,
and scatters features back onto the full grid for dense prediction. An
analytic cost model quantifies the compute and memory savings, and a
synthetic-imagery harness measures how much predictive skill survives at
each retention ratio.
"""

from .autodiff import Tape, Tensor, parameter
from .costmodel import CostReport, efficiency_ratios, flops
from .estimators import PatchMasker, RvitClassifier, RvitSegmenter
from .harness import (
    ExperimentConfig,
    evaluate_model,
    linear_probe,
    run_sweep,
    train_model,
)
from .masking import (
    RetentionPlan,
    SimilarityMatrix,
    TokenBatch,
    calibrate_threshold,
    collate,
    full_plan,
    ms3_thresholded,
    plan_diversity,
    plan_thresholded,
    plan_uniform_random,
    similarity_matrix,
)
from .metrics import macro_f1, mean_iou
from .model import (
    ModelConfig,
    RvitNet,
    load_checkpoint,
    save_checkpoint,
    scatter_back,
)
from .patches import PatchGrid, downscale, embed, partition, positional_table, reassemble
from .synthdata import Dataset, SceneSpec, generate_dataset, read_dataset, write_dataset

__version__ = "0.1.0"

__all__ = [
    "CostReport",
    "Dataset",
    "ExperimentConfig",
    "ModelConfig",
    "PatchGrid",
    "PatchMasker",
    "RetentionPlan",
    "RvitClassifier",
    "RvitNet",
    "RvitSegmenter",
    "SceneSpec",
    "SimilarityMatrix",
    "Tape",
    "Tensor",
    "TokenBatch",
    "calibrate_threshold",
    "collate",
    "downscale",
    "efficiency_ratios",
    "embed",
    "evaluate_model",
    "flops",
    "full_plan",
    "generate_dataset",
    "linear_probe",
    "load_checkpoint",
    "macro_f1",
    "mean_iou",
    "ms3_thresholded",
    "parameter",
    "partition",
    "plan_diversity",
    "plan_thresholded",
    "plan_uniform_random",
    "positional_table",
    "read_dataset",
    "reassemble",
    "run_sweep",
    "save_checkpoint",
    "scatter_back",
    "similarity_matrix",
    "train_model",
    "write_dataset",
]
