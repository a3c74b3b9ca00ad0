"""Fully connected CRF with Potts compatibility: energy and mean-field refinement.

The pairwise term uses an appearance kernel over (x, y, r, g, b) and a
smoothness kernel over (x, y)::

    psi(p, q) = [l_p != l_q] * (w1 * exp(-|p-q|^2/2a^2 - |I_p-I_q|^2/2b^2)
                                + w2 * exp(-|p-q|^2/2g^2))

Energies sum over *ordered* pairs ``p != q``; every unordered pair is counted
twice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    ImageBuffer,
    LabelMask,
    SoftSeg,
    UnaryField,
    _softmax,
    argmax_labeling,
    check_same_shape,
    softmax_over_classes,
)
from .filtering import GaussianKernel, build_features


@dataclass(frozen=True)
class CrfConfig:
    w1: float = 3.0
    w2: float = 4.0
    sigma_alpha: float = 67.0
    sigma_beta: float = 3.0
    sigma_gamma: float = 1.0
    iterations: int = 5

    def __post_init__(self):
        if min(self.sigma_alpha, self.sigma_beta, self.sigma_gamma) <= 0:
            raise ValueError("CRF bandwidths must be positive")
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("CRF kernel weights must be non-negative")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValueError("iterations must be a positive integer")


class CrfKernels:
    """Appearance and smoothness kernels of one image, built once and reused.

    A kernel whose weight is zero is never built.
    """

    def __init__(self, img: ImageBuffer, cfg: CrfConfig, exact: bool = False, workers: int = 1):
        self.cfg = cfg
        self.shape = img.shape
        self.appearance = None
        self.smoothness = None
        if cfg.w1 > 0:
            feats = build_features(img, "bilateral", (cfg.sigma_alpha, cfg.sigma_beta))
            self.appearance = GaussianKernel(feats, exact=exact, workers=workers)
        if cfg.w2 > 0:
            feats = build_features(img, "spatial", (cfg.sigma_gamma,))
            self.smoothness = GaussianKernel(feats, exact=exact, workers=workers)

    def messages(self, q: np.ndarray) -> np.ndarray:
        """Weighted sum of both kernels applied to ``q`` (N, C), self excluded."""
        out = np.zeros_like(q)
        if self.appearance is not None:
            out += self.cfg.w1 * self.appearance(q, include_self=False)
        if self.smoothness is not None:
            out += self.cfg.w2 * self.smoothness(q, include_self=False)
        return out


def _complete(mask: LabelMask) -> None:
    if not mask.is_complete:
        raise ValueError("energy requires a complete mask (no ignore pixels)")


def pairwise_energy(
    mask: LabelMask, img: ImageBuffer, cfg: CrfConfig, exact: bool = True, kernels: CrfKernels | None = None
) -> float:
    """Potts pairwise energy of a hard labeling, over ordered pairs."""
    _complete(mask)
    check_same_shape(mask, img)
    if kernels is None:
        kernels = CrfKernels(img, cfg, exact=exact)
    labels = mask.labels.ravel()
    present = np.unique(labels)
    # sum_l <[S = l], K'(1 - [S = l])>; terms for absent labels vanish
    same = (labels[:, None] == present[None, :]).astype(np.float64)
    msg = kernels.messages(1.0 - same)
    return float(np.sum(same * msg))


def unary_energy(mask: LabelMask, unary: UnaryField) -> float:
    _complete(mask)
    check_same_shape(mask, unary)
    if mask.labels.max() >= unary.classes:
        raise ValueError("mask label exceeds unary class count")
    phi = unary.potentials()
    picked = np.take_along_axis(phi, mask.labels[..., None], axis=2)
    return float(picked.sum())


def total_energy(
    mask: LabelMask, unary: UnaryField, img: ImageBuffer, cfg: CrfConfig, exact: bool = True,
    kernels: CrfKernels | None = None,
) -> float:
    check_same_shape(mask, unary, img)
    return unary_energy(mask, unary) + pairwise_energy(mask, img, cfg, exact=exact, kernels=kernels)


def mean_field_init(unary: UnaryField) -> SoftSeg:
    return softmax_over_classes(unary)


def _step(q: np.ndarray, phi: np.ndarray, kernels: CrfKernels) -> np.ndarray:
    h, w, c = phi.shape
    msg = kernels.messages(q.reshape(-1, c)).reshape(h, w, c)
    # Potts: label l pays the messages of every other label l' != l
    logits = -phi - (msg.sum(axis=2, keepdims=True) - msg)
    return _softmax(logits)


def mean_field_step(
    Q: SoftSeg, unary: UnaryField, img: ImageBuffer, cfg: CrfConfig, exact: bool = False,
    kernels: CrfKernels | None = None,
) -> SoftSeg:
    """One synchronous mean-field update of every pixel."""
    check_same_shape(Q, unary, img)
    if Q.classes != unary.classes:
        raise ValueError("Q and unary disagree on the class count")
    if kernels is None:
        kernels = CrfKernels(img, cfg, exact=exact)
    return SoftSeg(_step(Q.probs, unary.potentials(), kernels))


def refine(
    unary: UnaryField, img: ImageBuffer, cfg: CrfConfig = CrfConfig(), exact: bool = False, workers: int = 1
) -> tuple[LabelMask, SoftSeg]:
    """Mean-field post-processing; returns the MAP labeling and final Q."""
    check_same_shape(unary, img)
    kernels = CrfKernels(img, cfg, exact=exact, workers=workers)
    phi = unary.potentials()
    q = mean_field_init(unary).probs
    for _ in range(cfg.iterations):
        q = _step(q, phi, kernels)
    final = SoftSeg(q)
    return argmax_labeling(final), final
