"""Latent-representation atlas pipeline.

Train a dense prediction head over precomputed backbone features, cluster
its latent vectors into an annotated centroid atlas, classify new data by
nearest centroid, retrain on new samples without forgetting the atlas
(linearized minimum-norm updates with gradient projection), and adapt a
reduced-modality model toward the atlas with a composite loss.
"""

from .atlas import (
    AssignmentReport,
    CentroidAtlas,
    annotate,
    assign_nearest,
    kmeans_pp,
    load_atlas,
    project_3d,
    save_atlas,
    silhouette_score,
)
from .data_io import Dataset, Sample, SynthSpec, generate_synth, load_csv, pair_augment, save_csv
from .dense_head import (
    DenseHead,
    HeadConfig,
    LatentSet,
    TrainReport,
    extract_latents,
    forward,
    grad_check,
    load_head,
    save_head,
    train_mse,
)
from .domain_adapt import AdaptConfig, compute_z, grad_check_adapt, loss_e2, train_adapted
from .numerics import GradientProjectionResult, gradient_projection, least_norm_solve
from .retrain import (
    RetrainProblem,
    RetrainResult,
    build_linear_system,
    evaluate_drift,
    exemplars_from_atlas,
    naive_finetune,
    solve_retrain,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptConfig",
    "AssignmentReport",
    "CentroidAtlas",
    "Dataset",
    "DenseHead",
    "GradientProjectionResult",
    "HeadConfig",
    "LatentSet",
    "RetrainProblem",
    "RetrainResult",
    "Sample",
    "SynthSpec",
    "TrainReport",
    "annotate",
    "assign_nearest",
    "build_linear_system",
    "compute_z",
    "evaluate_drift",
    "exemplars_from_atlas",
    "extract_latents",
    "forward",
    "generate_synth",
    "grad_check",
    "grad_check_adapt",
    "gradient_projection",
    "kmeans_pp",
    "least_norm_solve",
    "load_atlas",
    "load_csv",
    "load_head",
    "loss_e2",
    "naive_finetune",
    "pair_augment",
    "project_3d",
    "save_atlas",
    "save_csv",
    "save_head",
    "silhouette_score",
    "solve_retrain",
    "train_adapted",
    "train_mse",
]
