"""Desk-scale adversarial-learned-loss domain adaptation laboratory."""

from .backend import NUMBA_ENABLED, backend_name
from .tensor import Tensor, apply, backward, grad_check, grl
from .nn import Mlp, ScheduleParams, init_mlp, lambda_schedule, lr_schedule
from .losses import (
    LossBundle,
    PseudoLabel,
    bce_vector,
    confusion_matrix,
    corrected_label_vector,
    objectives,
    opposite_distribution,
    pseudo_label,
    unhinged_loss,
)
from .data import DomainBatch, LabeledSet, ShiftSpec, apply_shift, batch_iter, gen_blobs, gen_two_moons, load_idx
from .harness import RunConfig, RunRecord, ablation_suite, evaluate, export_features, mmd_rbf, train

__version__ = "0.1.0"

__all__ = [
    "NUMBA_ENABLED",
    "backend_name",
    "Tensor",
    "apply",
    "backward",
    "grad_check",
    "grl",
    "Mlp",
    "ScheduleParams",
    "init_mlp",
    "lambda_schedule",
    "lr_schedule",
    "LossBundle",
    "PseudoLabel",
    "bce_vector",
    "confusion_matrix",
    "corrected_label_vector",
    "objectives",
    "opposite_distribution",
    "pseudo_label",
    "unhinged_loss",
    "DomainBatch",
    "LabeledSet",
    "ShiftSpec",
    "apply_shift",
    "batch_iter",
    "gen_blobs",
    "gen_two_moons",
    "load_idx",
    "RunConfig",
    "RunRecord",
    "ablation_suite",
    "evaluate",
    "export_features",
    "mmd_rbf",
    "train",
    "__version__",
]
