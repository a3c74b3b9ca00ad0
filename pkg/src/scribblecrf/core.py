"""Field types shared across the package and the softmax/argmax bridges.

All arrays are stored row-major as ``(height, width, ...)`` and frozen on
construction, so instances can be shared freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IGNORE = 255

VOC_CLASS_NAMES = (
    "background", "aeroplane", "bicycle", "bird", "boat", "bottle", "bus",
    "car", "cat", "chair", "cow", "diningtable", "dog", "horse", "motorbike",
    "person", "pottedplant", "sheep", "sofa", "train", "tvmonitor",
)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ImageBuffer:
    """An RGB image with channel values in [0, 255]."""

    rgb: np.ndarray

    def __post_init__(self):
        rgb = np.asarray(self.rgb, dtype=np.float64)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) image, got shape {rgb.shape}")
        if rgb.shape[0] < 1 or rgb.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if not np.all(np.isfinite(rgb)):
            raise ValueError("image contains non-finite values")
        if rgb.min() < 0 or rgb.max() > 255:
            raise ValueError("image values must lie in [0, 255]")
        object.__setattr__(self, "rgb", _frozen(rgb))

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.rgb.shape[:2]


@dataclass(frozen=True)
class LabelMask:
    """Hard per-pixel labels; ``ignore_value`` marks unlabeled pixels.

    ``classes`` is optional. When given, every non-ignore label is checked
    against it.
    """

    labels: np.ndarray
    ignore_value: int = IGNORE
    classes: int | None = None

    def __post_init__(self):
        raw = np.asarray(self.labels)
        if raw.ndim != 2 or raw.shape[0] < 1 or raw.shape[1] < 1:
            raise ValueError(f"expected non-empty (H, W) label array, got shape {raw.shape}")
        if raw.dtype.kind == "f":
            if not np.all(raw == np.round(raw)):
                raise ValueError("labels must be integers")
        elif raw.dtype.kind not in "iub":
            raise ValueError(f"labels must be integers, got dtype {raw.dtype}")
        labels = raw.astype(np.int64)
        valid = labels != self.ignore_value
        if np.any(labels[valid] < 0):
            raise ValueError("negative label")
        if self.classes is not None:
            if self.classes < 1:
                raise ValueError("classes must be >= 1")
            bad = labels[valid] >= self.classes
            if np.any(bad):
                raise ValueError(
                    f"label {int(labels[valid][bad][0])} out of range for {self.classes} classes"
                )
        object.__setattr__(self, "labels", _frozen(labels))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    @property
    def valid(self) -> np.ndarray:
        """Boolean map of labeled (non-ignore) pixels."""
        return self.labels != self.ignore_value

    @property
    def is_complete(self) -> bool:
        return bool(np.all(self.valid))


@dataclass(frozen=True)
class SoftSeg:
    """Per-pixel class distributions of shape ``(H, W, C)``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 3 or min(p.shape) < 1:
            raise ValueError(f"expected non-empty (H, W, C) array, got shape {p.shape}")
        if not np.all(np.isfinite(p)) or p.min() < 0 or p.max() > 1:
            raise ValueError("probabilities must lie in [0, 1]")
        if np.max(np.abs(p.sum(axis=2) - 1.0)) > 1e-6:
            raise ValueError("per-pixel probabilities must sum to 1")
        object.__setattr__(self, "probs", _frozen(p))

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape[:2]

    @property
    def classes(self) -> int:
        return self.probs.shape[2]


@dataclass(frozen=True)
class UnaryField:
    """Per-pixel class logits of shape ``(H, W, C)``.

    The unary potential is ``-log softmax(logits)``.
    """

    logits: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.logits, dtype=np.float64)
        if u.ndim != 3 or min(u.shape) < 1:
            raise ValueError(f"expected non-empty (H, W, C) array, got shape {u.shape}")
        if not np.all(np.isfinite(u)):
            raise ValueError("logits must be finite")
        object.__setattr__(self, "logits", _frozen(u))

    @property
    def shape(self) -> tuple[int, int]:
        return self.logits.shape[:2]

    @property
    def classes(self) -> int:
        return self.logits.shape[2]

    def potentials(self) -> np.ndarray:
        """Unary potentials ``-log softmax(logits)``, shape ``(H, W, C)``."""
        return -log_softmax(self.logits)


def voc_colormap(n: int = 256) -> np.ndarray:
    """The PASCAL VOC color map, ``(n, 3)`` uint8."""
    cmap = np.zeros((n, 3), dtype=np.uint8)
    for i in range(n):
        c, r, g, b = i, 0, 0, 0
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        cmap[i] = (r, g, b)
    return cmap


@dataclass(frozen=True)
class ClassPalette:
    colors: np.ndarray
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        colors = np.asarray(self.colors)
        if colors.ndim != 2 or colors.shape[1] != 3 or colors.shape[0] < 1:
            raise ValueError("palette colors must have shape (C, 3)")
        if colors.min() < 0 or colors.max() > 255:
            raise ValueError("palette colors must be 8-bit")
        if len({tuple(c) for c in colors.tolist()}) != len(colors):
            raise ValueError("palette colors must be distinct")
        names = tuple(self.names) or tuple(f"class{i}" for i in range(len(colors)))
        if len(names) != len(colors):
            raise ValueError("need one name per palette color")
        object.__setattr__(self, "colors", _frozen(colors.astype(np.uint8)))
        object.__setattr__(self, "names", names)

    @property
    def classes(self) -> int:
        return len(self.colors)

    @classmethod
    def voc(cls, classes: int = 21) -> "ClassPalette":
        """VOC colors for the first ``classes`` indices (VOC names when C <= 21)."""
        if not 1 <= classes <= 255:
            raise ValueError("classes must be in [1, 255]")
        names = VOC_CLASS_NAMES[:classes] if classes <= len(VOC_CLASS_NAMES) else ()
        return cls(voc_colormap(classes), names)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_over_classes(u: UnaryField) -> SoftSeg:
    return SoftSeg(_softmax(u.logits))


def argmax_labeling(s: SoftSeg) -> LabelMask:
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class.
    return LabelMask(np.argmax(s.probs, axis=2), classes=s.classes)


def one_hot(mask: LabelMask, classes: int) -> SoftSeg:
    if not mask.is_complete:
        raise ValueError("cannot one-hot partial mask")
    if mask.labels.max() >= classes:
        raise ValueError(f"label {int(mask.labels.max())} out of range for {classes} classes")
    return SoftSeg(np.eye(classes)[mask.labels])


def check_same_shape(*items) -> tuple[int, int]:
    """Raise ``ValueError`` unless all field-like items share (H, W)."""
    shapes = {tuple(it.shape) for it in items}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")
    return shapes.pop()
