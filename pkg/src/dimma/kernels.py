"""Per-pixel hot loops.

Every kernel exists twice: an ``@njit`` loop version and a vectorised numpy
version. The module-level names resolve to one of them according to
``dimma._accel.USE_NUMBA``. Random draws are always made by the caller and
passed in, so both paths consume identical random streams.
"""

import numpy as np

from ._accel import njit, pick

NBINS = 256


# -- histogram equalization -------------------------------------------------

@njit
def _equalize_u8_nb(q):
    h, w, c = q.shape
    n = h * w
    out = np.empty((h, w, c), dtype=np.float64)
    hist = np.zeros(NBINS, dtype=np.int64)
    lut = np.zeros(NBINS, dtype=np.float64)
    for ch in range(c):
        hist[:] = 0
        for i in range(h):
            for j in range(w):
                hist[q[i, j, ch]] += 1
        cdf_min = 0
        for b in range(NBINS):
            if hist[b] > 0:
                cdf_min = hist[b]
                break
        denom = n - cdf_min
        acc = 0
        for b in range(NBINS):
            acc += hist[b]
            if denom == 0:
                lut[b] = 0.0
            else:
                v = (acc - cdf_min) / denom
                lut[b] = v if v > 0.0 else 0.0
        for i in range(h):
            for j in range(w):
                out[i, j, ch] = lut[q[i, j, ch]]
    return out


def _equalize_u8_np(q):
    h, w, c = q.shape
    n = h * w
    out = np.empty((h, w, c), dtype=np.float64)
    for ch in range(c):
        plane = q[..., ch]
        hist = np.bincount(plane.ravel(), minlength=NBINS)
        cdf = np.cumsum(hist)
        cdf_min = hist[np.flatnonzero(hist)[0]]
        denom = n - cdf_min
        if denom == 0:
            out[..., ch] = 0.0
            continue
        lut = np.maximum((cdf - cdf_min) / denom, 0.0)
        out[..., ch] = lut[plane]
    return out


# -- per-bin ratio moments --------------------------------------------------

@njit
def _bin_moments_nb(bins, values):
    count = np.zeros(NBINS, dtype=np.int64)
    total = np.zeros(NBINS, dtype=np.float64)
    for i in range(bins.shape[0]):
        count[bins[i]] += 1
        total[bins[i]] += values[i]
    mean = np.zeros(NBINS, dtype=np.float64)
    for b in range(NBINS):
        if count[b] > 0:
            mean[b] = total[b] / count[b]
    m2 = np.zeros(NBINS, dtype=np.float64)
    for i in range(bins.shape[0]):
        d = values[i] - mean[bins[i]]
        m2[bins[i]] += d * d
    return count, mean, m2


def _bin_moments_np(bins, values):
    count = np.bincount(bins, minlength=NBINS).astype(np.int64)
    total = np.bincount(bins, weights=values, minlength=NBINS)
    mean = np.zeros(NBINS, dtype=np.float64)
    seen = count > 0
    mean[seen] = total[seen] / count[seen]
    dev = values - mean[bins]
    m2 = np.bincount(bins, weights=dev * dev, minlength=NBINS)
    return count, mean, m2


# -- illumination ratio field -----------------------------------------------

@njit
def _ratio_field_nb(bins, z, mu, sigma, gamma, noise_scale, lo, hi):
    out = np.empty(bins.shape[0], dtype=np.float64)
    for i in range(bins.shape[0]):
        k = bins[i]
        phi = gamma * mu[k] + noise_scale * sigma[k] * z[i]
        if phi < lo:
            phi = lo
        elif phi > hi:
            phi = hi
        out[i] = phi
    return out


def _ratio_field_np(bins, z, mu, sigma, gamma, noise_scale, lo, hi):
    phi = gamma * mu[bins] + noise_scale * sigma[bins] * z
    return np.clip(phi, lo, hi)


# -- mixture sampling -------------------------------------------------------

@njit
def _sample_mixture_nb(pi, offset, sigma, source, u, z, noise_scale, upper):
    n, m = pi.shape
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        acc = 0.0
        pick_m = m - 1
        for j in range(m):
            acc += pi[i, j]
            if acc > u[i]:
                pick_m = j
                break
        v = source[i] + offset[i, pick_m] + noise_scale * sigma[i, pick_m] * z[i]
        if v < 0.0:
            v = 0.0
        elif v > upper:
            v = upper
        out[i] = v
    return out


def _sample_mixture_np(pi, offset, sigma, source, u, z, noise_scale, upper):
    n, m = pi.shape
    cum = np.cumsum(pi, axis=1)
    idx = np.minimum((cum <= u[:, None]).sum(axis=1), m - 1)
    rows = np.arange(n)
    v = source + offset[rows, idx] + noise_scale * sigma[rows, idx] * z
    return np.clip(v, 0.0, upper)


equalize_u8 = pick(_equalize_u8_nb, _equalize_u8_np)
bin_moments = pick(_bin_moments_nb, _bin_moments_np)
ratio_field = pick(_ratio_field_nb, _ratio_field_np)
sample_mixture = pick(_sample_mixture_nb, _sample_mixture_np)

KERNELS = {
    "equalize_u8": (_equalize_u8_nb, _equalize_u8_np),
    "bin_moments": (_bin_moments_nb, _bin_moments_np),
    "ratio_field": (_ratio_field_nb, _ratio_field_np),
    "sample_mixture": (_sample_mixture_nb, _sample_mixture_np),
}
