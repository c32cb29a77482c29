"""Training-variant harness mirroring the few-shot ablation layout.

Variants:

* ``supervised``     UNet trained on the real pairs only, no dimming module
* ``deterministic``  unsupervised training with mixture-mean dimming
* ``mdn``            unsupervised training with sampled MDN dimming
* ``dimma``          ``mdn`` followed by finetuning on the real pairs
"""

from .brightnet import build_unet, enhance
from .imagecore import hist_equalize, mean_lightness
from .metrics import evaluate_pairs
from .trainer import finetune, train_unsupervised

VARIANTS = ("supervised", "deterministic", "mdn", "dimma")


def true_gap(light, dark):
    return min(1.0, max(-1.0, mean_lightness(light) - mean_lightness(dark)))


def evaluate_enhancer(net, test_pairs):
    """Score ``enhance`` at the ground-truth lightness gap. ``test_pairs`` holds (name, light, dark)."""
    return evaluate_pairs((name, enhance(net, dark, true_gap(light, dark)).output, light)
                          for name, light, dark in test_pairs)


def evaluate_baseline(kind, test_pairs):
    """``kind`` is ``"dark"`` (raw input) or ``"histeq"``."""
    fns = {"dark": lambda d: d, "histeq": hist_equalize}
    fn = fns[kind]
    return evaluate_pairs((name, fn(dark), light) for name, light, dark in test_pairs)


def run_variant(variant, *, train_pairs, corpus, val_pairs, test_pairs, mdn_params, stats,
                dim_cfg, net_cfg, unsup_cfg, finetune_cfg, loss_cfg):
    """Train one variant from a fresh net; returns (net, histories, MetricReport)."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    net = build_unet(net_cfg)
    histories = []
    if variant != "supervised":
        mode = "deterministic" if variant == "deterministic" else "mdn"
        net, hist = train_unsupervised(net, corpus, mdn_params, stats, dim_cfg, unsup_cfg,
                                       loss_cfg, val_pairs, dim_mode=mode)
        histories.append(hist)
    if variant in ("supervised", "dimma"):
        net, hist = finetune(net, train_pairs, finetune_cfg, loss_cfg, val_pairs)
        histories.append(hist)
    return net, histories, evaluate_enhancer(net, test_pairs)
