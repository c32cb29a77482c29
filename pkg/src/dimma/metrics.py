"""Full-reference image quality metrics and directory reports."""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from ._accel import pmap
from .errors import NoPairsFound, ShapeMismatch, TooSmall
from .imagecore import load_image

log = logging.getLogger(__name__)

PSNR_CAP = 100.0
SSIM_WIN = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03
LUMA_601 = np.array([0.299, 0.587, 0.114])

# sRGB (D65) to XYZ; the white point is taken from the row sums so that
# sRGB white lands exactly on L* = 100, a* = b* = 0
SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
WHITE_D65 = SRGB_TO_XYZ.sum(axis=1)

COLUMNS = ("psnr", "ssim_gray", "ssim_rgb", "delta_e")
MD_TITLES = {"psnr": "PSNR", "ssim_gray": "SSIM", "ssim_rgb": "RGB-SSIM", "delta_e": "DeltaE"}


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * math.log10(mse))


def gaussian_window(size=SSIM_WIN, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    half = len(g) // 2
    out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return out[half:-half, half:-half]


def _ssim_plane(x, y):
    g = gaussian_window()
    mu_x, mu_y = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mu_x * mu_x
    syy = _filter_valid(y * y, g) - mu_y * mu_y
    sxy = _filter_valid(x * y, g) - mu_x * mu_y
    c1, c2 = K1 ** 2, K2 ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def _check_ssim(a, b):
    a, b = _pair(a, b)
    if min(a.shape[:2]) < SSIM_WIN:
        raise TooSmall(f"SSIM needs both sides >= {SSIM_WIN}, got {a.shape[:2]}")
    return a, b


def ssim_gray(a, b):
    a, b = _check_ssim(a, b)
    return _ssim_plane(a @ LUMA_601, b @ LUMA_601)


def ssim_rgb(a, b):
    a, b = _check_ssim(a, b)
    return float(np.mean([_ssim_plane(a[..., c], b[..., c]) for c in range(3)]))


def srgb_to_lab(img):
    c = np.asarray(img, dtype=np.float64)
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = lin @ SRGB_TO_XYZ.T / WHITE_D65
    delta = 6.0 / 29.0
    f = np.where(xyz > delta ** 3, np.cbrt(xyz), xyz / (3 * delta ** 2) + 4.0 / 29.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def delta_e(a, b):
    """Mean CIE76 colour difference."""
    a, b = _pair(a, b)
    d = srgb_to_lab(a) - srgb_to_lab(b)
    return float(np.mean(np.sqrt((d * d).sum(axis=-1))))


@dataclass
class MetricRow:
    name: str
    psnr: float
    ssim_gray: float
    ssim_rgb: float
    delta_e: float
    extra: dict = field(default_factory=dict)

    def value(self, key):
        return self.extra[key] if key in self.extra else getattr(self, key)


@dataclass
class MetricReport:
    rows: list
    extra_columns: tuple = ()
    orphans: list = field(default_factory=list)

    @property
    def columns(self):
        return COLUMNS + tuple(self.extra_columns)

    @property
    def aggregates(self):
        """{metric: (mean, std)}; std is the population std over rows."""
        out = {}
        for key in self.columns:
            vals = np.array([r.value(key) for r in self.rows], dtype=np.float64)
            out[key] = (float(vals.mean()), float(vals.std()))
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("name",) + self.columns)
            for r in self.rows:
                w.writerow([r.name] + [repr(float(r.value(k))) for k in self.columns])
            agg = self.aggregates
            w.writerow(["mean"] + [repr(agg[k][0]) for k in self.columns])
            w.writerow(["std"] + [repr(agg[k][1]) for k in self.columns])

    def to_markdown(self):
        titles = [MD_TITLES.get(k, k) for k in self.columns]
        lines = ["| Image | " + " | ".join(titles) + " |",
                 "|" + "---|" * (len(titles) + 1)]
        for r in self.rows:
            lines.append(f"| {r.name} | " + " | ".join(f"{r.value(k):.4f}" for k in self.columns) + " |")
        agg = self.aggregates
        lines.append("| mean ± std | " + " | ".join(f"{agg[k][0]:.4f} ± {agg[k][1]:.4f}"
                                                   for k in self.columns) + " |")
        return "\n".join(lines) + "\n"


def score_pair(name, pred, gt, extra_metrics=None):
    extra = {k: float(fn(pred, gt)) for k, fn in (extra_metrics or {}).items()}
    return MetricRow(name, psnr(pred, gt), ssim_gray(pred, gt), ssim_rgb(pred, gt),
                     delta_e(pred, gt), extra)


def evaluate_pairs(named_pairs, extra_metrics=None):
    """Report over in-memory ``(name, pred, gt)`` triples."""
    rows = [score_pair(n, p, g, extra_metrics) for n, p, g in named_pairs]
    if not rows:
        raise NoPairsFound("nothing to evaluate")
    return MetricReport(rows, tuple(extra_metrics or ()))


def evaluate_dir(pred_dir, gt_dir, out_path=None, extra_metrics=None):
    """Score same-named images; writes ``out_path`` (CSV) and a sibling ``.md``.

    ``extra_metrics`` maps a column name to any ``f(pred, gt) -> float``; this
    is where LPIPS/NIQE-style plug-ins attach.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    pred = {p.name for p in pred_dir.iterdir() if p.is_file()}
    gt = {p.name for p in gt_dir.iterdir() if p.is_file()}
    orphans = sorted(pred ^ gt)
    for name in orphans:
        log.warning("no counterpart for %s; skipped", name)
    common = sorted(pred & gt)
    if not common:
        raise NoPairsFound(f"no same-named images in {pred_dir} and {gt_dir}")
    rows = pmap(lambda n: score_pair(n, load_image(pred_dir / n), load_image(gt_dir / n),
                                     extra_metrics), common)
    report = MetricReport(rows, tuple(extra_metrics or ()))
    report.orphans = orphans
    if out_path is not None:
        out_path = Path(out_path)
        report.write_csv(out_path)
        out_path.with_suffix(".md").write_text(report.to_markdown())
    return report
