"""Image representation, PNG/JPEG I/O, histogram equalization and lightness.

Images are plain ``numpy`` arrays of shape (H, W, 3), float64, sRGB, with
every element in [0, 1].
"""

from pathlib import Path

import numpy as np
from PIL import Image

from . import kernels
from .errors import RangeError, ShapeMismatch, UnsupportedFormat

_READABLE = {"PNG", "JPEG"}


def check_image(img, name="image"):
    """Validate the (H, W, 3) unit-range contract and return a float64 view."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeMismatch(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise RangeError(f"{name} has elements outside [0, 1]")
    return arr


def same_shape(a, b):
    if np.shape(a) != np.shape(b):
        raise ShapeMismatch(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def quantize8(x):
    """Round-half-up 8-bit quantization of unit-range values."""
    return np.clip(np.floor(np.asarray(x, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def load_image(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    try:
        with Image.open(path) as im:
            fmt = im.format
            if fmt not in _READABLE:
                raise UnsupportedFormat(f"{path}: format {fmt} is not PNG or JPEG")
            if im.mode == "P":
                im = im.convert("RGBA" if "transparency" in im.info else "RGB")
            if im.mode not in ("RGB", "RGBA"):
                raise UnsupportedFormat(f"{path}: mode {im.mode} is not 3-channel 8-bit")
            arr = np.asarray(im)
    except OSError as exc:
        raise UnsupportedFormat(f"{path}: {exc}") from exc
    return arr[..., :3].astype(np.float64) / 255.0


def save_image(img, path):
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeMismatch(f"image must have shape (H, W, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise RangeError(f"refusing to write {path}: values outside [0, 1]")
    Image.fromarray(quantize8(arr), mode="RGB").save(Path(path), format="PNG")


def hist_equalize(img):
    """Per-channel histogram equalization of the 8-bit quantized image."""
    arr = check_image(img)
    return kernels.equalize_u8(np.ascontiguousarray(quantize8(arr)))


def lightness(img):
    """Per-pixel channel mean, shape (H, W)."""
    return np.asarray(img, dtype=np.float64).mean(axis=-1)


def mean_lightness(img):
    return float(lightness(img).mean())
