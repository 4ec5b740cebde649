"""Frequency-adaptive matrix completion for skewed rating data.

MF baseline, truncated MF (deterministic and Poisson-dropout), inverse
frequency weighted MF, and the per-quartile FARP ensemble, plus synthetic
data generation and skew-aware evaluation.
"""

from tailmc._accel import backend
from tailmc.data import (
    FrequencyTable,
    QuartileMap,
    RatingDataset,
    assign_quartiles,
    compute_frequencies,
    load_ratings,
    save_ratings,
    skewed_subsample,
    split,
)
from tailmc.ensemble import FarpEnsemble, farp_fit
from tailmc.evaluation import EvalReport, bucket_curve, evaluate, quartile_report, rmse
from tailmc.models import Kind, LatentModel, TrainConfig, TruncationConfig, load_model, save_model, train
from tailmc.synthgen import apply_mask, full_matrix, generate_lowrank

__version__ = "0.1.0"

__all__ = [
    "backend",
    "FrequencyTable",
    "QuartileMap",
    "RatingDataset",
    "assign_quartiles",
    "compute_frequencies",
    "load_ratings",
    "save_ratings",
    "skewed_subsample",
    "split",
    "FarpEnsemble",
    "farp_fit",
    "EvalReport",
    "bucket_curve",
    "evaluate",
    "quartile_report",
    "rmse",
    "Kind",
    "LatentModel",
    "TrainConfig",
    "TruncationConfig",
    "load_model",
    "save_model",
    "train",
    "apply_mask",
    "full_matrix",
    "generate_lowrank",
]
