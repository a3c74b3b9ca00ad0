"""Scribble losses: partial cross-entropy and the relaxed dense CRF regularizer.

Gradients are analytic. ``partial_cross_entropy`` and ``combined_loss``
differentiate with respect to logits, and ``dense_crf_loss`` with respect to
the soft segmentation.
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
    check_same_shape,
    log_softmax,
)
from .filtering import GaussianKernel, build_features


@dataclass(frozen=True)
class LossConfig:
    w: float = 2.0 ** -9
    sigma_rgb: float = 15.0
    sigma_xy: float = 100.0
    scale: float = 0.5
    lambda_crf: float = 1.0
    pce_reduction: str = "sum"  # or "mean" over labeled pixels

    def __post_init__(self):
        if self.sigma_rgb <= 0 or self.sigma_xy <= 0:
            raise ValueError("loss bandwidths must be positive")
        if not 0 < self.scale <= 1:
            raise ValueError("scale must lie in (0, 1]")
        if self.w < 0 or self.lambda_crf < 0:
            raise ValueError("loss weights must be non-negative")
        if self.pce_reduction not in ("sum", "mean"):
            raise ValueError("pce_reduction must be 'sum' or 'mean'")


@dataclass(frozen=True)
class LossReport:
    pce: float
    crf: float
    combined: float
    labeled_pixel_count: int


def _resample_matrix(n_in: int, n_out: int, scale: float) -> np.ndarray:
    """Bilinear (half-pixel centred) resampling along one axis, ``(n_out, n_in)``."""
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) / scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    m[rows, lo] += 1.0 - frac
    m[rows, hi] += frac
    return m


class Downsampler:
    """Separable bilinear downsampling ``X -> R_y X R_x^T`` and its transpose."""

    def __init__(self, shape: tuple[int, int], scale: float):
        h, w = shape
        self.in_shape = (h, w)
        self.identity = scale == 1
        self.out_shape = (max(1, int(np.floor(h * scale))), max(1, int(np.floor(w * scale))))
        if not self.identity:
            self.ry = _resample_matrix(h, self.out_shape[0], scale)
            self.rx = _resample_matrix(w, self.out_shape[1], scale)

    def down(self, x: np.ndarray) -> np.ndarray:
        if self.identity:
            return x
        # two separable passes; c_einsum keeps a fixed summation order (no BLAS)
        return np.einsum("jw,iwc->ijc", self.rx, np.einsum("ih,hwc->iwc", self.ry, x))

    def up(self, g: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`down`."""
        if self.identity:
            return g
        return np.einsum("jw,hjc->hwc", self.rx, np.einsum("ih,ijc->hjc", self.ry, g))


class CrfLossKernel:
    """Downsampler plus the affinity kernel on the downsampled image.

    Spatial positions are measured in downsampled pixels, so ``sigma_xy`` is
    scaled by ``cfg.scale`` to keep the kernel's extent fixed in the original
    image.
    """

    def __init__(self, img: ImageBuffer, cfg: LossConfig, exact: bool = False, workers: int = 1):
        self.sampler = Downsampler(img.shape, cfg.scale)
        small = ImageBuffer(np.clip(self.sampler.down(img.rgb), 0.0, 255.0))
        feats = build_features(small, "bilateral", (cfg.sigma_xy * cfg.scale, cfg.sigma_rgb))
        self.kernel = GaussianKernel(feats, exact=exact, workers=workers)
        self.shape = img.shape
        self.cfg = cfg


def _pce_from_log_probs(logp: np.ndarray, probs: np.ndarray, scribbles: LabelMask, reduction: str):
    check_same_shape(scribbles, logp[..., 0])
    c = logp.shape[2]
    valid = scribbles.valid
    labels = scribbles.labels
    if np.any(labels[valid] >= c):
        raise ValueError(f"scribble label {int(labels[valid].max())} out of range for {c} classes")
    count = int(valid.sum())
    grad = np.zeros_like(probs)
    if count == 0:
        return 0.0, grad, 0
    ys, xs = np.nonzero(valid)
    lab = labels[ys, xs]
    loss = -float(logp[ys, xs, lab].sum())
    grad[ys, xs] = probs[ys, xs]
    grad[ys, xs, lab] -= 1.0
    if reduction == "mean":
        loss /= count
        grad /= count
    return loss, grad, count


def partial_cross_entropy(S: SoftSeg, scribbles: LabelMask, reduction: str = "sum"):
    """Cross-entropy over scribbled pixels; gradient is w.r.t. the logits of ``S``."""
    p = S.probs
    with np.errstate(divide="ignore"):
        logp = np.log(np.maximum(p, np.finfo(np.float64).tiny))
    loss, grad, _ = _pce_from_log_probs(logp, p, scribbles, reduction)
    return loss, grad


def crf_loss_kernel(img: ImageBuffer, cfg: LossConfig, exact: bool = False, workers: int = 1) -> CrfLossKernel:
    return CrfLossKernel(img, cfg, exact=exact, workers=workers)


def dense_crf_loss_array(probs: np.ndarray, ctx: CrfLossKernel):
    """Loss and gradient for a raw ``(H, W, C)`` array, not required to be normalized."""
    check_same_shape(ctx, probs[..., 0])
    c = probs.shape[2]
    small = ctx.sampler.down(probs)
    s = small.reshape(-1, c)
    # filtering 1 - S (not S) keeps the loss of a constant one-hot S at exactly 0
    kc = ctx.kernel(1.0 - s, include_self=False)
    deg = ctx.kernel.degree(include_self=False)
    w = ctx.cfg.w
    loss = w * float(np.sum(s * kc))
    # deg - 2 K'S with K'S = deg - K'(1 - S)
    grad_small = w * (2.0 * kc - deg[:, None])
    grad = ctx.sampler.up(grad_small.reshape(small.shape))
    return loss, grad


def dense_crf_loss(
    S: SoftSeg, img: ImageBuffer, cfg: LossConfig, exact: bool = False, kernel: CrfLossKernel | None = None
):
    """Relaxed Potts energy ``w * sum_l sum_{p!=q} k(p,q) S_p(l) (1 - S_q(l))``.

    Returns ``(loss, grad)`` with ``grad`` w.r.t. ``S``, shape ``(H, W, C)``.
    """
    check_same_shape(S, img)
    if kernel is None:
        kernel = CrfLossKernel(img, cfg, exact=exact)
    return dense_crf_loss_array(S.probs, kernel)


def softmax_backward(probs: np.ndarray, grad_s: np.ndarray) -> np.ndarray:
    """Chain a gradient w.r.t. softmax outputs back to the logits."""
    return probs * (grad_s - np.sum(probs * grad_s, axis=-1, keepdims=True))


def combined_loss(
    logits: UnaryField, img: ImageBuffer, scribbles: LabelMask, cfg: LossConfig, exact: bool = False,
    kernel: CrfLossKernel | None = None,
):
    """pCE + lambda * dense CRF loss, with the total gradient w.r.t. logits.

    When ``cfg.lambda_crf`` is zero the CRF term is skipped and reported as 0.
    """
    check_same_shape(logits, img, scribbles)
    logp = log_softmax(logits.logits)
    probs = _softmax(logits.logits)
    pce, grad, count = _pce_from_log_probs(logp, probs, scribbles, cfg.pce_reduction)
    crf = 0.0
    if cfg.lambda_crf > 0:
        if kernel is None:
            kernel = CrfLossKernel(img, cfg, exact=exact)
        crf, g_s = dense_crf_loss_array(probs, kernel)
        grad = grad + cfg.lambda_crf * softmax_backward(probs, g_s)
    report = LossReport(pce=pce, crf=crf, combined=pce + cfg.lambda_crf * crf, labeled_pixel_count=count)
    return report, grad
