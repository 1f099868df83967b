"""8-bit PNG / binary PPM reading and writing.

Pixel values map linearly between ``[0, 255]`` and ``[-1, 1]``.
"""
import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageIOError

_EXT_FORMATS = {".png": "PNG", ".ppm": "PPM", ".pgm": "PPM", ".pnm": "PPM"}


def to_bytes(image):
    """``[-1, 1]`` floats to uint8, clipping out-of-range values."""
    scaled = (np.clip(np.asarray(image, dtype=np.float64), -1.0, 1.0) + 1.0) * 127.5
    return np.round(scaled).astype(np.uint8)


def from_bytes(data):
    return np.asarray(data, dtype=np.float64) / 127.5 - 1.0


def _open(path):
    try:
        img = Image.open(path)
        img.load()
    except (OSError, UnidentifiedImageError) as exc:
        raise ImageIOError(f"cannot read image {path}: {exc}") from exc
    if img.mode not in ("1", "L", "LA", "P", "RGB", "RGBA"):
        raise ImageIOError(f"{path}: unsupported pixel format {img.mode!r} (8-bit only)")
    return img


def load_image(path):
    """Read an RGB image as an ``(H, W, 3)`` float array in ``[-1, 1]``."""
    img = _open(path).convert("RGB")
    return from_bytes(np.asarray(img))


def load_mask(path):
    """Read a grayscale mask; pixels ``>= 128`` are foreground."""
    img = _open(path).convert("L")
    return np.asarray(img) >= 128


def _format_for(path):
    ext = os.path.splitext(str(path))[1].lower()
    if ext not in _EXT_FORMATS:
        raise ImageIOError(f"{path}: unsupported extension {ext!r} (use .png or .ppm)")
    return _EXT_FORMATS[ext]


def save_image(image, path):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ImageIOError(f"expected an (H, W, 3) image, got {image.shape}")
    try:
        Image.fromarray(to_bytes(image), "RGB").save(path, format=_format_for(path))
    except OSError as exc:
        raise ImageIOError(f"cannot write {path}: {exc}") from exc


def save_mask(mask, path):
    data = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    try:
        Image.fromarray(data, "L").save(path, format=_format_for(path))
    except OSError as exc:
        raise ImageIOError(f"cannot write {path}: {exc}") from exc
