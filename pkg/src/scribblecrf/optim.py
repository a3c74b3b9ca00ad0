"""Gradient descent on a per-pixel logit field under pCE + dense CRF loss.

The optimizer mirrors the usual segmentation training recipe (SGD with
momentum, weight decay and a poly learning-rate schedule) but updates the
logits directly instead of network weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ImageBuffer, LabelMask, SoftSeg, UnaryField, _softmax, argmax_labeling, check_same_shape
from .losses import CrfLossKernel, LossConfig, LossReport, combined_loss


@dataclass(frozen=True)
class OptimConfig:
    lr0: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 5e-4
    power: float = 1.2
    max_iter: int = 500
    seed: int = 0
    init_std: float = 0.0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0 or self.init_std < 0:
            raise ValueError("weight_decay and init_std must be non-negative")
        if self.power <= 0:
            raise ValueError("power must be positive")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError("max_iter must be a positive integer")


@dataclass(frozen=True)
class FitResult:
    logits: UnaryField
    soft: SoftSeg
    mask: LabelMask
    history: tuple[LossReport, ...]


def poly_lr(iteration: int, cfg: OptimConfig) -> float:
    if not 0 <= iteration <= cfg.max_iter:
        raise ValueError(f"iteration {iteration} outside [0, {cfg.max_iter}]")
    return cfg.lr0 * (1.0 - iteration / cfg.max_iter) ** cfg.power


def sgd_momentum_step(logits: np.ndarray, grad: np.ndarray, velocity: np.ndarray, lr: float, cfg: OptimConfig):
    """One heavy-ball step; returns ``(logits', velocity')``."""
    logits, grad, velocity = (np.asarray(a, dtype=np.float64) for a in (logits, grad, velocity))
    if not logits.shape == grad.shape == velocity.shape:
        raise ValueError(f"shape mismatch: {logits.shape}, {grad.shape}, {velocity.shape}")
    g = grad + cfg.weight_decay * logits
    velocity = cfg.momentum * velocity + g
    return logits - lr * velocity, velocity


def fit_scribbles(
    img: ImageBuffer,
    scribbles: LabelMask,
    classes: int,
    loss_cfg: LossConfig = LossConfig(),
    opt_cfg: OptimConfig = OptimConfig(),
    exact: bool = False,
    workers: int = 1,
    callback=None,
) -> FitResult:
    """Optimize a logit field so its softmax fits the scribbles and the image.

    ``history[i]`` is the loss at the logits entering iteration ``i``.
    ``callback(i, report)`` is invoked after each iteration if given.
    """
    check_same_shape(img, scribbles)
    if classes < 1:
        raise ValueError("classes must be >= 1")
    valid = scribbles.valid
    if np.any(scribbles.labels[valid] >= classes):
        raise ValueError(f"scribble label out of range for {classes} classes")
    if not valid.any() and loss_cfg.lambda_crf == 0:
        raise ValueError("objective has no supervision signal")

    h, w = img.shape
    rng = np.random.default_rng(opt_cfg.seed)
    if opt_cfg.init_std > 0:
        logits = rng.normal(0.0, opt_cfg.init_std, (h, w, classes))
    else:
        logits = np.zeros((h, w, classes))
    velocity = np.zeros_like(logits)
    kernel = CrfLossKernel(img, loss_cfg, exact=exact, workers=workers) if loss_cfg.lambda_crf > 0 else None

    history = []
    for it in range(opt_cfg.max_iter):
        report, grad = combined_loss(UnaryField(logits), img, scribbles, loss_cfg, kernel=kernel)
        history.append(report)
        logits, velocity = sgd_momentum_step(logits, grad, velocity, poly_lr(it, opt_cfg), opt_cfg)
        if callback is not None:
            callback(it, report)

    field = UnaryField(logits)
    soft = SoftSeg(_softmax(logits))
    return FitResult(field, soft, argmax_labeling(soft), tuple(history))
