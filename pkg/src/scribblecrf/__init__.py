"""Dense CRF inference and scribble-supervised segmentation with a dense CRF loss."""

from .core import (
    IGNORE,
    ClassPalette,
    ImageBuffer,
    LabelMask,
    SoftSeg,
    UnaryField,
    argmax_labeling,
    one_hot,
    softmax_over_classes,
)
from .crf import CrfConfig, mean_field_step, pairwise_energy, refine, total_energy, unary_energy
from .filtering import GaussianKernel, PermutohedralLattice, brute_force_filter, build_features, lattice_filter
from .losses import LossConfig, LossReport, combined_loss, dense_crf_loss, partial_cross_entropy
from .metrics import ConfusionMatrix, accumulate, miou
from .optim import FitResult, OptimConfig, fit_scribbles, poly_lr, sgd_momentum_step

__all__ = [
    "IGNORE", "ClassPalette", "ImageBuffer", "LabelMask", "SoftSeg", "UnaryField", "argmax_labeling",
    "one_hot", "softmax_over_classes", "CrfConfig", "mean_field_step", "pairwise_energy", "refine",
    "total_energy", "unary_energy", "GaussianKernel", "PermutohedralLattice", "brute_force_filter",
    "build_features", "lattice_filter", "LossConfig", "LossReport", "combined_loss", "dense_crf_loss",
    "partial_cross_entropy", "ConfusionMatrix", "accumulate", "miou", "FitResult", "OptimConfig",
    "fit_scribbles", "poly_lr", "sgd_momentum_step",
]
