"""File formats: RGB images, indexed-PNG label masks, UNR1 unary fields and
tab-separated dataset manifests.

UNR1 layout (all little-endian)::

    bytes 0-3    b"UNR1"
    bytes 4-15   height, width, classes as uint32
    bytes 16-    height*width*classes float32, element (y, x, c) at
                 index (y*width + x)*classes + c
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .core import IGNORE, ClassPalette, ImageBuffer, LabelMask, UnaryField, voc_colormap

UNR1_MAGIC = b"UNR1"
_HEADER = struct.Struct("<4sIII")
_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _png_bit_depth(path: Path) -> int | None:
    """Bit depth from the IHDR chunk, or None if the file is not a PNG."""
    with open(path, "rb") as fh:
        head = fh.read(25)
    if not head.startswith(_PNG_SIGNATURE) or len(head) < 25:
        return None
    return head[24]


def _open(path) -> Image.Image:
    path = Path(path)
    depth = _png_bit_depth(path)
    if depth is not None and depth > 8:
        raise ValueError(f"{path}: unsupported bit depth {depth}")
    try:
        im = Image.open(path)
        im.load()
    except (OSError, SyntaxError) as exc:
        raise ValueError(f"{path}: cannot read image ({exc})") from exc
    return im


def load_image(path) -> ImageBuffer:
    """8-bit RGB or grayscale PNG/PPM; grayscale is replicated to 3 channels."""
    im = _open(path)
    if im.mode in ("I", "I;16", "I;16B", "F"):
        raise ValueError(f"{path}: unsupported bit depth (mode {im.mode})")
    if im.mode == "L":
        g = np.asarray(im, dtype=np.float64)
        return ImageBuffer(np.repeat(g[..., None], 3, axis=2))
    if im.mode in ("RGB", "RGBA", "LA", "P"):
        return ImageBuffer(np.asarray(im.convert("RGB"), dtype=np.float64))
    raise ValueError(f"{path}: unsupported image mode {im.mode}")


def load_mask(path, classes: int, ignore: int = IGNORE) -> LabelMask:
    """Indexed PNG, index = class and ``ignore`` = unlabeled.

    Plain 8-bit grayscale PNGs are read the same way.
    """
    im = _open(path)
    if im.mode not in ("P", "L"):
        raise ValueError(f"{path}: expected an indexed PNG, got mode {im.mode}")
    labels = np.asarray(im, dtype=np.int64)
    try:
        return LabelMask(labels, ignore_value=ignore, classes=classes)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc


def _palette_bytes(palette: ClassPalette) -> bytes:
    table = voc_colormap(256)
    n = min(palette.classes, 256)
    table[:n] = palette.colors[:n]
    return table.tobytes()


def save_mask(mask: LabelMask, palette: ClassPalette, path) -> None:
    """Write an indexed PNG; ignore pixels are stored as index 255."""
    labels = np.where(mask.valid, mask.labels, IGNORE)
    if np.any(labels[mask.valid] >= IGNORE):
        raise ValueError("labels >= 255 do not fit an indexed PNG")
    h, w = labels.shape
    im = Image.frombytes("P", (w, h), np.ascontiguousarray(labels, dtype=np.uint8).tobytes())
    im.putpalette(_palette_bytes(palette))
    im.save(Path(path), format="PNG")


def save_unary(field: UnaryField, path) -> None:
    h, w, c = field.logits.shape
    data = field.logits.astype("<f4")
    if not np.all(np.isfinite(data)):
        raise ValueError("logits overflow float32")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(UNR1_MAGIC, h, w, c))
        fh.write(data.tobytes(order="C"))


def load_unary(path) -> UnaryField:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size or raw[:4] != UNR1_MAGIC:
        raise ValueError(f"{path}: not a UNR1 file")
    _, h, w, c = _HEADER.unpack_from(raw)
    expected = h * w * c * 4
    payload = raw[_HEADER.size:]
    if len(payload) < expected:
        raise ValueError(f"{path}: truncated payload ({len(payload)} of {expected} bytes)")
    if len(payload) > expected:
        raise ValueError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    if h == 0 or w == 0 or c == 0:
        raise ValueError(f"{path}: empty field {h}x{w}x{c}")
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{path}: non-finite value in payload")
    return UnaryField(data.astype(np.float64))


@dataclass(frozen=True)
class Sample:
    image: Path
    scribbles: Path
    gt: Path | None = None
    unary: Path | None = None

    @property
    def name(self) -> str:
        return self.image.stem


def load_manifest(path) -> list[Sample]:
    """One sample per line: image, scribbles[, gt[, unary]], tab-separated.

    Blank lines and ``#`` comments are skipped, an empty or ``-`` field marks
    a missing optional entry, and relative paths resolve against the
    manifest's directory.
    """
    path = Path(path)
    base = path.parent
    samples = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = [f.strip() for f in line.split("\t")]
        if len(fields) < 2 or len(fields) > 4:
            raise ValueError(f"{path}:{lineno}: expected 2 to 4 tab-separated fields")
        fields += [""] * (4 - len(fields))
        resolved = []
        for i, f in enumerate(fields):
            if f in ("", "-"):
                if i < 2:
                    raise ValueError(f"{path}:{lineno}: image and scribble paths are required")
                resolved.append(None)
                continue
            p = Path(f)
            p = p if p.is_absolute() else base / p
            if not p.exists():
                raise ValueError(f"{path}:{lineno}: missing file {p}")
            resolved.append(p)
        samples.append(Sample(*resolved))
    return samples


def overlay(img: ImageBuffer, mask: LabelMask, palette: ClassPalette, alpha: float = 0.5) -> np.ndarray:
    """Alpha-blend class colors over the image; ignore pixels show the image."""
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    if img.shape != mask.shape:
        raise ValueError(f"shape mismatch: {img.shape} vs {mask.shape}")
    table = np.frombuffer(_palette_bytes(palette), dtype=np.uint8).reshape(256, 3).astype(np.float64)
    valid = mask.valid
    if np.any(mask.labels[valid] > 255):
        raise ValueError("labels above 255 have no palette color")
    colors = table[np.where(valid, mask.labels, 0)]
    out = np.where(valid[..., None], (1 - alpha) * img.rgb + alpha * colors, img.rgb)
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def save_rgb(rgb: np.ndarray, path) -> None:
    Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8)).save(Path(path), format="PNG")
