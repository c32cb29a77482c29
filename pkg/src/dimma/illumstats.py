"""Per-lightness-bin illumination ratio statistics and dimmed illumination sampling."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import EmptyInput, InvalidConfig, NoObservedBins, ShapeMismatch, UnfittedStats
from .imagecore import check_image, lightness, quantize8
from .retinex import DEFAULT_EPS

NBINS = kernels.NBINS
HEADER = "dimma-stats v1"
RATIO_FLOOR = 1e-4


@dataclass
class IlluminationStats:
    mu: np.ndarray            # (256,) float32
    sigma: np.ndarray         # (256,) float32
    count: np.ndarray         # (256,) int64
    interpolated: np.ndarray  # (256,) bool

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float32)
        self.sigma = np.asarray(self.sigma, dtype=np.float32)
        self.count = np.asarray(self.count, dtype=np.int64)
        self.interpolated = np.asarray(self.interpolated, dtype=bool)
        for name in ("mu", "sigma", "count", "interpolated"):
            if getattr(self, name).shape != (NBINS,):
                raise ShapeMismatch(f"{name} must have {NBINS} entries")

    @property
    def fitted(self):
        return bool(np.all(np.isfinite(self.mu)) and np.all(self.mu >= 0)
                    and np.all(np.isfinite(self.sigma)) and np.all(self.sigma >= 0))

    @classmethod
    def constant(cls, mu, sigma=0.0):
        """Flat table; handy for ablations and tests."""
        return cls(np.full(NBINS, mu), np.full(NBINS, sigma),
                   np.full(NBINS, 2), np.zeros(NBINS, dtype=bool))


@dataclass
class DimConfig:
    gamma_min: float = 0.3
    gamma_max: float = 2.0
    alpha: float = 0.5
    ratio_clamp_max: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma_min <= self.gamma_max:
            raise InvalidConfig("need 0 < gamma_min <= gamma_max")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidConfig("alpha must lie in [0, 1]")
        if self.ratio_clamp_max < 1.0:
            raise InvalidConfig("ratio_clamp_max must be >= 1")


def stats_from_ratios(bins, ratios):
    """Bin-wise mean and Bessel-corrected std, sparse bins interpolated."""
    bins = np.ascontiguousarray(bins, dtype=np.int64).ravel()
    ratios = np.ascontiguousarray(ratios, dtype=np.float64).ravel()
    if bins.shape != ratios.shape:
        raise ShapeMismatch("bins and ratios differ in length")
    if bins.size and (bins.min() < 0 or bins.max() >= NBINS):
        raise ValueError("bin index out of range")
    count, mean, m2 = kernels.bin_moments(bins, ratios)
    observed = count >= 2
    if not observed.any():
        raise NoObservedBins("no lightness bin holds two or more samples")
    std = np.zeros(NBINS)
    std[observed] = np.sqrt(m2[observed] / (count[observed] - 1))
    ks = np.arange(NBINS)
    # np.interp extrapolates with the edge values
    mu = np.interp(ks, ks[observed], mean[observed])
    sigma = np.interp(ks, ks[observed], std[observed])
    return IlluminationStats(mu, sigma, count, ~observed)


def pair_ratios(light, dark, epsilon=DEFAULT_EPS):
    """Lightness bins of ``light`` and dark/light lightness ratios per pixel."""
    light = check_image(light, "light")
    dark = check_image(dark, "dark")
    if light.shape != dark.shape:
        raise ShapeMismatch(f"pair shapes differ: {light.shape} vs {dark.shape}")
    m, m_dark = lightness(light), lightness(dark)
    illum = m + epsilon
    keep = illum >= 2 * epsilon
    return quantize8(illum[keep]).astype(np.int64), m_dark[keep] / m[keep]


def fit_stats(pairs, epsilon=DEFAULT_EPS):
    pairs = list(pairs)
    if not pairs:
        raise EmptyInput("fit_stats needs at least one image pair")
    bins, ratios = zip(*(pair_ratios(light, dark, epsilon) for light, dark in pairs))
    return stats_from_ratios(np.concatenate(bins), np.concatenate(ratios))


def sample_dim_field(illum, stats, gamma, alpha, rng, ratio_clamp_max=1.5):
    """Draw a dimmed illumination field ``phi * illum`` with per-pixel ratios."""
    if stats is None or not stats.fitted:
        raise UnfittedStats("illumination statistics are missing or incomplete")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    illum = np.asarray(illum, dtype=np.float64)
    bins = quantize8(illum).astype(np.int64).ravel()
    z = rng.standard_normal(bins.size)
    phi = kernels.ratio_field(bins, z, stats.mu.astype(np.float64),
                              stats.sigma.astype(np.float64), float(gamma),
                              float(np.sqrt(alpha)), RATIO_FLOOR, float(ratio_clamp_max))
    return np.minimum(phi.reshape(illum.shape) * illum, 1.0)


def save_stats(stats, path):
    lines = [HEADER]
    for k in range(NBINS):
        lines.append(f"{k} {stats.mu[k]:.9g} {stats.sigma[k]:.9g} "
                     f"{stats.count[k]} {int(stats.interpolated[k])}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_stats(path):
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise UnfittedStats(f"{path}: missing '{HEADER}' header")
    rows = [ln.split() for ln in lines[1:] if ln.strip()]
    if len(rows) != NBINS or any(len(r) != 5 for r in rows):
        raise UnfittedStats(f"{path}: expected {NBINS} rows of 5 fields")
    rows.sort(key=lambda r: int(r[0]))
    if [int(r[0]) for r in rows] != list(range(NBINS)):
        raise UnfittedStats(f"{path}: bin indices must cover 0..255")
    return IlluminationStats(
        mu=np.array([np.float32(r[1]) for r in rows]),
        sigma=np.array([np.float32(r[2]) for r in rows]),
        count=np.array([int(r[3]) for r in rows]),
        interpolated=np.array([r[4] == "1" for r in rows]),
    )
