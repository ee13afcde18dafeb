"""Discriminative dictionary learning.

A dictionary, sparse codes and one-vs-all linear classifiers are learned
jointly by alternating sparse coding with classification terms, classifier
fitting, a weighted KSVD sweep and closed-form noise/cost parameter updates.
"""

from ._backend import BACKEND
from .classifiers import (
    ClassifierBank,
    ConvergenceError,
    ConvergenceWarning,
    check_labels,
    decision_values,
    one_hot_labels,
    train_all,
    train_classifier,
)
from .data_io import (
    Dataset,
    SyntheticSpec,
    generate_synthetic,
    load_delimited,
    load_idx,
    save_delimited,
    split,
)
from .dictionary import InitScheme, init_dictionary, ksvd_update
from .dsc import DscProblem, dsc_objective, dsc_solve, newton_linearize
from .inference import PredictOptions, evaluate, predict, predict_batch
from .losses import LossKind, loss_d1, loss_d2, loss_ratio12, loss_value
from .model_io import load_model, save_model
from .sparse_coding import SparseCode, batch_encode, encode_matrix, omp_encode
from .trainer import (
    DdlModel,
    TrainConfig,
    TrainingError,
    map_objective,
    train,
    train_baseline,
    update_gamma,
    update_sigma,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ClassifierBank",
    "ConvergenceError",
    "ConvergenceWarning",
    "Dataset",
    "DdlModel",
    "DscProblem",
    "InitScheme",
    "LossKind",
    "PredictOptions",
    "SparseCode",
    "SyntheticSpec",
    "TrainConfig",
    "TrainingError",
    "batch_encode",
    "check_labels",
    "decision_values",
    "dsc_objective",
    "dsc_solve",
    "encode_matrix",
    "evaluate",
    "generate_synthetic",
    "init_dictionary",
    "ksvd_update",
    "load_delimited",
    "load_idx",
    "load_model",
    "loss_d1",
    "loss_d2",
    "loss_ratio12",
    "loss_value",
    "map_objective",
    "newton_linearize",
    "omp_encode",
    "one_hot_labels",
    "predict",
    "predict_batch",
    "save_delimited",
    "save_model",
    "split",
    "train",
    "train_all",
    "train_baseline",
    "train_classifier",
    "update_gamma",
    "update_sigma",
]
