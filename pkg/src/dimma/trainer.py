"""Brightener losses and the unsupervised / finetuning training loops."""

import copy
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .brightnet import assemble_input, enhance, save_unet, to_batch
from .dimmer import dim_image
from .errors import EmptyCorpus, EmptyInput, InvalidConfig, NonFiniteLoss, ShapeMismatch
from .imagecore import check_image, mean_lightness, quantize8
from .metrics import psnr

log = logging.getLogger(__name__)


@dataclass
class LossConfig:
    lam: float = 0.1
    feature_extractor: object = None  # frozen callable on (B, 3, H, W), or None

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidConfig("perceptual weight must be >= 0")


@dataclass
class TrainConfig:
    crop_size: int = 256
    batch_size: int = 4
    learning_rate: float = 1e-5
    max_iters: int = 5000
    early_stop_patience: int = 10
    val_interval: int = 100
    flip: bool = True
    # snap synthetic dark crops to the 8-bit grid, like a saved camera frame
    quantize_dark: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("crop_size", "batch_size", "max_iters", "early_stop_patience", "val_interval"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise InvalidConfig("learning_rate must be positive")
        if self.crop_size % 8:
            raise InvalidConfig("crop_size must be a multiple of 8")


@dataclass
class History:
    steps: list = field(default_factory=list)        # dicts: iter, loss, mse, perc, lr
    validations: list = field(default_factory=list)  # (iter, psnr); iter 0 is the input net
    best_iter: int = 0
    best_psnr: float = float("nan")
    stopped_early: bool = False
    meta: dict = field(default_factory=dict)

    def write(self, path):
        vals = dict(self.validations)
        lines = [f"# {k}={v}" for k, v in sorted(self.meta.items())]
        if 0 in vals:
            lines.append(f"# baseline_val_psnr={vals[0]!r}")
        lines.append(f"# best_iter={self.best_iter} best_val_psnr={self.best_psnr!r} "
                     f"stopped_early={int(self.stopped_early)}")
        lines.append("# iter loss mse perc lr [val_psnr]")
        for s in self.steps:
            row = f"{s['iter']} {s['loss']!r} {s['mse']!r} {s['perc']!r} {s['lr']!r}"
            if s["iter"] in vals:
                row += f" {vals[s['iter']]!r}"
            lines.append(row)
        Path(path).write_text("\n".join(lines) + "\n")


def load_feature_extractor(path):
    """Frozen TorchScript feature network from a model file."""
    net = torch.jit.load(str(path), map_location="cpu")
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)
    return net


def loss_total(pred, target, cfg):
    """Return (total, mse, perceptual) as scalar tensors."""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    mse = torch.mean((pred - target) ** 2)
    if cfg.feature_extractor is None or cfg.lam == 0:
        perc = torch.zeros((), dtype=pred.dtype)
    else:
        perc = torch.mean((cfg.feature_extractor(pred) - cfg.feature_extractor(target)) ** 2)
    return mse + cfg.lam * perc, mse, perc


def cosine_rate(it, base_rate, max_iters):
    """Cosine annealing from ``base_rate`` at 0 down to 0 at ``max_iters``."""
    t = min(max(it, 0), max_iters) / max_iters
    return 0.5 * base_rate * (1.0 + math.cos(math.pi * t))


def random_crop(images, size, rng, flip=True):
    """Same random crop (and optional horizontal flip) of every array in ``images``."""
    h, w = images[0].shape[:2]
    ph, pw = max(0, size - h), max(0, size - w)
    if ph or pw:
        images = [np.pad(im, [(0, ph), (0, pw), (0, 0)], mode="reflect" if min(h, w) > 1 else "edge")
                  for im in images]
        h, w = images[0].shape[:2]
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    out = [im[top:top + size, left:left + size] for im in images]
    if flip and rng.random() < 0.5:
        out = [im[:, ::-1] for im in out]
    return [np.ascontiguousarray(im) for im in out]


def validate(net, val_pairs):
    """Mean PSNR of ``enhance`` over (light, dark) pairs at the true lightness gap."""
    net.eval()
    scores = []
    for light, dark in val_pairs:
        dm = float(np.clip(mean_lightness(light) - mean_lightness(dark), -1.0, 1.0))
        scores.append(psnr(enhance(net, dark, dm).output, light))
    net.train()
    return float(np.mean(scores))


def _fit(net, make_batch, train_cfg, loss_cfg, val_pairs, rng, checkpoint_dir=None, meta=None):
    history = History(meta=dict(meta or {}))
    opt = torch.optim.Adam(net.parameters(), lr=train_cfg.learning_rate)
    best_state = copy.deepcopy(net.state_dict())
    if val_pairs:
        history.best_psnr = validate(net, val_pairs)
        history.validations.append((0, history.best_psnr))
    stale = 0
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
    net.train()
    for it in range(1, train_cfg.max_iters + 1):
        lr = cosine_rate(it - 1, train_cfg.learning_rate, train_cfg.max_iters)
        for group in opt.param_groups:
            group["lr"] = lr
        x, dark, target, delta_m = make_batch(rng)
        pred = dark + net.residual(x, delta_m)
        total, mse, perc = loss_total(pred, target, loss_cfg)
        if not torch.isfinite(total):
            raise NonFiniteLoss(f"training loss diverged at iteration {it}")
        opt.zero_grad()
        total.backward()
        opt.step()
        history.steps.append({"iter": it, "loss": total.item(), "mse": mse.item(),
                              "perc": perc.item(), "lr": lr})
        if val_pairs and it % train_cfg.val_interval == 0:
            score = validate(net, val_pairs)
            history.validations.append((it, score))
            log.info("iter %d loss %.5f val_psnr %.3f", it, total.item(), score)
            if checkpoint_dir is not None:
                save_unet(net, checkpoint_dir / "last.ckpt")
            if score > history.best_psnr:
                history.best_psnr, history.best_iter = score, it
                best_state = copy.deepcopy(net.state_dict())
                stale = 0
            else:
                stale += 1
                if stale >= train_cfg.early_stop_patience:
                    history.stopped_early = True
                    log.info("early stop at iteration %d", it)
                    break
    if val_pairs:
        net.load_state_dict(best_state)
    else:
        history.best_iter = len(history.steps)
    net.eval()
    return net, history


def _stack(samples):
    x = to_batch(np.stack([s[0] for s in samples]))
    dark = to_batch(np.stack([s[1] for s in samples]))
    target = to_batch(np.stack([s[2] for s in samples]))
    delta_m = torch.tensor([s[3] for s in samples], dtype=torch.float32)
    return x, dark, target, delta_m


def train_unsupervised(net, corpus, mdn_params, stats, dim_cfg, train_cfg, loss_cfg,
                       val_pairs=(), dim_mode="mdn", checkpoint_dir=None, on_sample=None):
    """Train on light images only, dimming a fresh crop for every sample.

    ``corpus`` is any sequence of light images (indexable, with ``len``).
    ``on_sample(light_crop, dark_crop, delta_m)`` is called for every sample.
    """
    if len(corpus) == 0:
        raise EmptyCorpus("no images to train on")
    rng = np.random.default_rng(train_cfg.seed)

    def make_batch(rng):
        samples = []
        for _ in range(train_cfg.batch_size):
            light = check_image(corpus[int(rng.integers(len(corpus)))])
            (crop,) = random_crop([light], train_cfg.crop_size, rng, train_cfg.flip)
            dark = dim_image(crop, mdn_params, stats, dim_cfg, rng, mode=dim_mode).dark
            if train_cfg.quantize_dark:
                dark = quantize8(dark) / 255.0
            delta_m = mean_lightness(crop) - mean_lightness(dark)
            if on_sample is not None:
                on_sample(crop, dark, delta_m)
            samples.append((assemble_input(dark), dark, crop, delta_m))
        return _stack(samples)

    meta = {"mode": "unsupervised", "dim_mode": dim_mode, "corpus": len(corpus)}
    return _fit(net, make_batch, train_cfg, loss_cfg, list(val_pairs), rng, checkpoint_dir, meta)


def finetune(net, pairs, train_cfg, loss_cfg, val_pairs=(), checkpoint_dir=None):
    """Supervised training on real (light, dark) pairs; returns the best-validation net."""
    pairs = [(check_image(l, "light"), check_image(d, "dark")) for l, d in pairs]
    if not pairs:
        raise EmptyInput("finetune needs at least one pair")
    for i, (light, dark) in enumerate(pairs):
        if light.shape != dark.shape:
            raise ShapeMismatch(f"pair {i}: {light.shape} vs {dark.shape}")
    rng = np.random.default_rng(train_cfg.seed)

    def make_batch(rng):
        samples = []
        for _ in range(train_cfg.batch_size):
            light, dark = pairs[int(rng.integers(len(pairs)))]
            light, dark = random_crop([light, dark], train_cfg.crop_size, rng, train_cfg.flip)
            delta_m = mean_lightness(light) - mean_lightness(dark)
            samples.append((assemble_input(dark), dark, light, delta_m))
        return _stack(samples)

    meta = {"mode": "finetune", "pairs": len(pairs)}
    return _fit(net, make_batch, train_cfg, loss_cfg, list(val_pairs), rng, checkpoint_dir, meta)
