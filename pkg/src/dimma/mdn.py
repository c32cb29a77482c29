"""Per-pixel mixture density network for reflectance distortion.

Each pixel is described by ``x = [r, g, b, l, l_dark]`` (light reflectance,
light illumination, dark illumination). A shared MLP (a stack of 1x1
convolutions in image terms) feeds one head per colour channel; every head
emits ``M`` mixing logits, mean offsets and log-stds. The density of the
dark reflectance ``r_dark`` in channel ``k`` is

    p(r_dark) = sum_m pi_m * N(r_dark; r_k + offset_m, sigma_m^2)
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from scipy.special import logsumexp
from torch import nn

from . import kernels
from .checkpoint import read_checkpoint, write_checkpoint
from .errors import EmptyInput, InvalidConfig, NonFiniteLoss, ShapeMismatch
from .retinex import R_MAX_SCALE as R_MAX
from .retinex import decompose

MAGIC = b"DIMMA-MDN\0"
SIGMA_FLOOR = 1e-6
N_INPUTS = 5
N_CHANNELS = 3
LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


@dataclass
class MDNConfig:
    components: int = 4
    hidden_widths: list = field(default_factory=lambda: [64, 64])
    epochs: int = 1000
    learning_rate: float = 0.01
    batch_pixels: int = 65536
    # std of the head-weight perturbation applied before training; zero heads
    # would keep all components identical forever
    symmetry_jitter: float = 0.05
    seed: int = 0

    def __post_init__(self):
        self.hidden_widths = [int(w) for w in self.hidden_widths]
        if self.components < 1:
            raise InvalidConfig("components must be >= 1")
        if not self.hidden_widths or min(self.hidden_widths) < 1:
            raise InvalidConfig("hidden_widths must be a nonempty list of positive ints")
        if self.epochs < 1 or self.learning_rate <= 0 or self.batch_pixels < 1:
            raise InvalidConfig("epochs, learning_rate and batch_pixels must be positive")


@dataclass
class MixtureField:
    pi: np.ndarray         # (H, W, 3, M), sums to one over M
    mu_offset: np.ndarray  # (H, W, 3, M)
    sigma: np.ndarray      # (H, W, 3, M), >= SIGMA_FLOOR


class MixtureDensityNet(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        layers, width = [], N_INPUTS
        for h in config.hidden_widths:
            layers += [nn.Linear(width, h), nn.Tanh()]
            width = h
        self.trunk = nn.Sequential(*layers)
        m = config.components
        self.heads = nn.ModuleList(nn.Linear(width, 3 * m) for _ in range(N_CHANNELS))

    def forward(self, x):
        """(N, 5) features -> log_pi, offset, sigma, each (N, 3, M)."""
        hidden = self.trunk(x)
        out = torch.stack([head(hidden) for head in self.heads], dim=1)
        logits, offset, log_sigma = out.chunk(3, dim=-1)
        sigma = torch.exp(log_sigma).clamp_min(SIGMA_FLOOR)
        return torch.log_softmax(logits, dim=-1), offset, sigma


def init_mdn(config):
    gen = torch.Generator().manual_seed(int(config.seed))
    model = MixtureDensityNet(config)
    with torch.no_grad():
        for layer in model.trunk:
            if isinstance(layer, nn.Linear):
                layer.weight.normal_(0.0, 1.0 / math.sqrt(layer.in_features), generator=gen)
                layer.bias.zero_()
        for head in model.heads:
            head.weight.zero_()
            head.bias.zero_()
    return model


def pixel_features(R, L, L_D):
    R = np.asarray(R, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    L_D = np.asarray(L_D, dtype=np.float64)
    if L.ndim == 2:
        L = L[..., None]
    if L_D.ndim == 2:
        L_D = L_D[..., None]
    if R.ndim != 3 or R.shape[2] != 3 or L.shape != R.shape[:2] + (1,) or L_D.shape != L.shape:
        raise ShapeMismatch(f"R {R.shape}, L {L.shape}, L_D {L_D.shape} do not line up")
    feats = np.concatenate([R, L, L_D], axis=2).reshape(-1, N_INPUTS)
    if not np.all(np.isfinite(feats)):
        raise ValueError("non-finite MDN input")
    return feats


def _param_dtype(model):
    return next(model.parameters()).dtype


def mdn_forward(params, R, L, L_D):
    feats = pixel_features(R, L, L_D)
    h, w = np.shape(R)[:2]
    with torch.no_grad():
        log_pi, offset, sigma = params(torch.as_tensor(feats, dtype=_param_dtype(params)))
    m = log_pi.shape[-1]

    def grid(t):
        return t.double().numpy().reshape(h, w, N_CHANNELS, m)

    return MixtureField(pi=grid(log_pi.exp()), mu_offset=grid(offset), sigma=grid(sigma))


def mixture_nll(log_pi, offset, sigma, source, target):
    """Mean negative log-likelihood, torch version used for training."""
    z = (target.unsqueeze(-1) - source.unsqueeze(-1) - offset) / sigma
    log_comp = -0.5 * z * z - torch.log(sigma) - LOG_SQRT_2PI
    return -torch.logsumexp(log_pi + log_comp, dim=-1).mean()


def mdn_nll(field, R_source, R_target):
    src = np.asarray(R_source, dtype=np.float64)
    tgt = np.asarray(R_target, dtype=np.float64)
    if src.shape != tgt.shape or field.pi.shape[:-1] != src.shape:
        raise ShapeMismatch("mixture field and reflectance shapes disagree")
    z = (tgt[..., None] - src[..., None] - field.mu_offset) / field.sigma
    with np.errstate(divide="ignore"):
        log_w = np.log(field.pi)
    log_comp = log_w - 0.5 * z * z - np.log(field.sigma) - LOG_SQRT_2PI
    return float(-logsumexp(log_comp, axis=-1).mean())


def training_tensors(pairs):
    feats, src, tgt = [], [], []
    for light, dark in pairs:
        if np.shape(light) != np.shape(dark):
            raise ShapeMismatch(f"pair shapes differ: {np.shape(light)} vs {np.shape(dark)}")
        lit, dim = decompose(light), decompose(dark)
        feats.append(pixel_features(lit.reflectance, lit.illumination, dim.illumination))
        src.append(lit.reflectance.reshape(-1, 3))
        tgt.append(dim.reflectance.reshape(-1, 3))
    as_t = lambda xs: torch.as_tensor(np.concatenate(xs), dtype=torch.float32)
    return as_t(feats), as_t(src), as_t(tgt)


def train_mdn(pairs, config, log_every=0, logger=None):
    """Fit the MDN by Adam on the pixel-wise NLL; returns (model, per-epoch losses)."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyInput("train_mdn needs at least one image pair")
    return fit_mdn(*training_tensors(pairs), config, log_every=log_every, logger=logger)


def fit_mdn(x, src, tgt, config, log_every=0, logger=None):
    """Train on explicit tuples: features (N, 5), light reflectance (N, 3), dark reflectance (N, 3)."""
    as_t = lambda a: torch.as_tensor(np.asarray(a), dtype=torch.float32)
    x, src, tgt = as_t(x), as_t(src), as_t(tgt)
    if x.ndim != 2 or x.shape[1] != N_INPUTS or src.shape != (x.shape[0], 3) or tgt.shape != src.shape:
        raise ShapeMismatch("expected features (N, 5) and reflectances (N, 3)")
    if x.shape[0] == 0:
        raise EmptyInput("no training pixels")
    model = init_mdn(config)
    gen = torch.Generator().manual_seed(int(config.seed) + 1)
    if config.symmetry_jitter > 0:
        with torch.no_grad():
            for head in model.heads:
                head.weight.normal_(0.0, config.symmetry_jitter, generator=gen)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    n = x.shape[0]
    history = []
    for epoch in range(config.epochs):
        if n > config.batch_pixels:
            order = torch.randperm(n, generator=gen)
            batches = order.split(config.batch_pixels)
        else:
            batches = [None]
        total = 0.0
        for idx in batches:
            xb, sb, tb = (x, src, tgt) if idx is None else (x[idx], src[idx], tgt[idx])
            opt.zero_grad()
            loss = mixture_nll(*model(xb), sb, tb)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"MDN loss diverged at epoch {epoch}")
            loss.backward()
            opt.step()
            total += loss.item() * xb.shape[0]
        history.append(total / n)
        if logger is not None and log_every and (epoch + 1) % log_every == 0:
            logger.info("mdn epoch %d/%d nll %.5f", epoch + 1, config.epochs, history[-1])
    model.eval()
    return model, history


def sample_reflectance(field, R_source, alpha, rng, r_max=R_MAX):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    src = np.asarray(R_source, dtype=np.float64)
    m = field.pi.shape[-1]
    n = src.size
    u = rng.random(n)
    z = rng.standard_normal(n)
    flat = lambda a: np.ascontiguousarray(a.reshape(n, m), dtype=np.float64)
    out = kernels.sample_mixture(flat(field.pi), flat(field.mu_offset), flat(field.sigma),
                                 np.ascontiguousarray(src.ravel()), u, z,
                                 float(np.sqrt(alpha)), float(r_max))
    return out.reshape(src.shape)


def expected_reflectance(field, R_source, r_max=R_MAX):
    """Mixture mean ``r + sum_m pi_m offset_m``; the deterministic-dimming variant."""
    src = np.asarray(R_source, dtype=np.float64)
    return np.clip(src + (field.pi * field.mu_offset).sum(axis=-1), 0.0, r_max)


def mdn_pdf_curve(params, probe, channel, grid):
    probe = np.asarray(probe, dtype=np.float64).reshape(-1)
    if probe.shape != (N_INPUTS,):
        raise ValueError("probe must be a 5-vector [r, g, b, l, l_dark]")
    if channel not in (0, 1, 2):
        raise ValueError("channel must be 0, 1 or 2")
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    if grid.size == 0:
        raise ValueError("grid must be nonempty")
    with torch.no_grad():
        log_pi, offset, sigma = params(torch.as_tensor(probe[None], dtype=_param_dtype(params)))
    pi = log_pi[0, channel].exp().double().numpy()
    mean = probe[channel] + offset[0, channel].double().numpy()
    sd = sigma[0, channel].double().numpy()
    z = (grid[:, None] - mean[None, :]) / sd[None, :]
    dens = (pi * np.exp(-0.5 * z * z) / (sd * math.sqrt(2 * math.pi))).sum(axis=1)
    return list(zip(grid.tolist(), dens.tolist()))


def save_mdn(model, path):
    write_checkpoint(path, MAGIC, asdict(model.config), model.state_dict())


def load_mdn(path):
    config, state = read_checkpoint(path, MAGIC)
    model = MixtureDensityNet(MDNConfig(**config))
    model.load_state_dict(state)
    model.eval()
    return model
