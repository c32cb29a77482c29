"""Synthetic dark image generation: sampled illumination dimming plus MDN
reflectance distortion."""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._accel import pmap
from .imagecore import check_image, load_image, mean_lightness, quantize8, save_image
from .illumstats import sample_dim_field
from .mdn import expected_reflectance, mdn_forward, sample_reflectance
from .retinex import decompose

log = logging.getLogger(__name__)

MODES = ("mdn", "deterministic", "identity")


@dataclass
class DimmedSample:
    dark: np.ndarray
    dark_reflectance: np.ndarray
    dark_illumination: np.ndarray
    delta_m: float
    gamma_used: float


def dim_image(light, mdn_params, stats, cfg, rng, mode="mdn", gamma=None):
    """Produce one dimmed version of ``light``.

    ``mode="deterministic"`` forces zero temperature and replaces the
    reflectance draw by the mixture mean. ``mode="identity"`` keeps the light
    reflectance (no MDN at all).
    """
    if mode not in MODES:
        raise ValueError(f"unknown dimming mode {mode!r}")
    light = check_image(light, "light")
    pair = decompose(light)
    if gamma is None:
        gamma = float(rng.uniform(cfg.gamma_min, cfg.gamma_max))
    alpha = 0.0 if mode == "deterministic" else cfg.alpha
    L_D = sample_dim_field(pair.illumination, stats, gamma, alpha, rng, cfg.ratio_clamp_max)
    if mode == "identity":
        R_D = pair.reflectance
    else:
        field = mdn_forward(mdn_params, pair.reflectance, pair.illumination, L_D)
        if mode == "deterministic":
            R_D = expected_reflectance(field, pair.reflectance)
        else:
            R_D = sample_reflectance(field, pair.reflectance, alpha, rng)
    dark = np.clip(R_D * L_D, 0.0, 1.0)
    return DimmedSample(dark=dark, dark_reflectance=R_D, dark_illumination=L_D,
                        delta_m=mean_lightness(light) - mean_lightness(dark),
                        gamma_used=gamma)


def dim_corpus(images, mdn_params, stats, cfg, out_dir, seed=None, mode="mdn", gamma=None):
    """Dim each ``(name, image)`` and write dark PNGs, sidecars and a manifest.

    Image ``i`` uses seed ``master ^ i``, so results do not depend on the
    number of workers. The recorded delta_m is measured on
    the 8-bit dark image actually written, so it can be recomputed from disk.
    Returns the manifest rows.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    master = cfg.seed if seed is None else seed

    def one(item):
        i, (name, light, light_path) = item
        item_seed = int(master) ^ i
        sample = dim_image(light, mdn_params, stats, cfg, np.random.default_rng(item_seed),
                           mode=mode, gamma=gamma)
        dark = quantize8(sample.dark) / 255.0
        delta_m = mean_lightness(light) - mean_lightness(dark)
        dark_path = out_dir / f"{Path(name).stem}.png"
        save_image(dark, dark_path)
        record = {"name": name, "light": str(light_path), "dark": str(dark_path),
                  "delta_m": delta_m, "gamma": sample.gamma_used, "seed": item_seed}
        (out_dir / f"{Path(name).stem}.json").write_text(json.dumps(record, sort_keys=True) + "\n")
        return str(dark_path), str(light_path), delta_m, sample.gamma_used, item_seed

    rows = pmap(one, list(enumerate(images)))
    with open(out_dir / "manifest.txt", "w") as fh:
        for dark_path, light_path, delta_m, g, s in rows:
            fh.write(f"{dark_path} {light_path} {delta_m!r} {g!r} {s}\n")
    return rows


def iter_image_dir(path):
    """Yield ``(name, image, path)`` for readable images in ``path``, sorted by name."""
    from .errors import UnsupportedFormat

    for p in sorted(Path(path).iterdir()):
        if not p.is_file():
            continue
        try:
            img = load_image(p)
        except UnsupportedFormat as exc:
            log.warning("skipping %s: %s", p, exc)
            continue
        yield p.name, img, p
