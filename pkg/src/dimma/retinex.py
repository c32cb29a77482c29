"""Closed-form retinex split: illumination is the channel mean, reflectance
the image divided by it."""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .imagecore import check_image

DEFAULT_EPS = 1e-4
# channel / channel-mean never exceeds 3
R_MAX_SCALE = 3.0


@dataclass
class RetinexPair:
    reflectance: np.ndarray   # (H, W, 3)
    illumination: np.ndarray  # (H, W, 1)


def decompose(img, epsilon=DEFAULT_EPS):
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    arr = check_image(img)
    illum = arr.mean(axis=2, keepdims=True) + epsilon
    return RetinexPair(reflectance=arr / illum, illumination=illum)


def recompose(pair, clamp=True):
    r = np.asarray(pair.reflectance, dtype=np.float64)
    l = np.asarray(pair.illumination, dtype=np.float64)
    if l.ndim == 2:
        l = l[..., None]
    if r.ndim != 3 or r.shape[2] != 3 or l.shape != r.shape[:2] + (1,):
        raise ShapeMismatch(f"reflectance {r.shape} and illumination {l.shape} do not match")
    out = r * l
    return np.clip(out, 0.0, 1.0) if clamp else out
