"""``dimma`` command line.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import brightnet, dataingest, dimmer, illumstats, mdn, metrics, trainer
from .config import derive_seed, load_config
from .errors import DimmaError, InvalidConfig
from .imagecore import load_image, save_image

log = logging.getLogger("dimma")

STATS_FILE = "stats.txt"
MDN_FILE = "mdn.ckpt"


class UsageError(Exception):
    pass


def _resolve_config(args):
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.reseed(args.seed)
    log.info("resolved config: %s", json.dumps(cfg.to_dict(), sort_keys=True, default=str))
    return cfg


def _load_pairs(pairs_dir, subset_file=None):
    ds = dataingest.load_paired(pairs_dir)
    if subset_file:
        ds = dataingest.select_subset(ds, dataingest.read_subset_file(subset_file))
    return ds


def _loss_config(cfg):
    extractor = None
    if cfg.perceptual_model:
        extractor = trainer.load_feature_extractor(cfg.perceptual_model)
    return trainer.LossConfig(lam=cfg.perceptual_lambda, feature_extractor=extractor)


def _load_dim_artifacts(dim_dir):
    dim_dir = Path(dim_dir)
    return illumstats.load_stats(dim_dir / STATS_FILE), mdn.load_mdn(dim_dir / MDN_FILE)


def cmd_fit_dim(args):
    cfg = _resolve_config(args)
    if args.epochs is not None:
        cfg.mdn.epochs = args.epochs
    ds = _load_pairs(args.pairs, args.subset)
    pairs = ds.load()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stats = illumstats.fit_stats(pairs)
    illumstats.save_stats(stats, out / STATS_FILE)
    model, history = mdn.train_mdn(pairs, cfg.mdn, log_every=100, logger=log)
    mdn.save_mdn(model, out / MDN_FILE)
    print(f"pairs={len(pairs)} final_nll={history[-1]:.6f}")
    return 0


def cmd_dim(args):
    cfg = _resolve_config(args)
    stats, model = _load_dim_artifacts(args.dim)
    overrides = {}
    if args.alpha is not None:
        overrides["alpha"] = args.alpha
    if args.gamma is not None:
        overrides["gamma_min"] = overrides["gamma_max"] = args.gamma
    cfg.dim = dataclasses.replace(cfg.dim, **overrides)
    rows = dimmer.dim_corpus(dimmer.iter_image_dir(args.input), model, stats, cfg.dim,
                             args.out, seed=derive_seed(cfg.seed, "dim-corpus"), mode=args.mode)
    print(f"dimmed={len(rows)} manifest={Path(args.out) / 'manifest.txt'}")
    return 0


def _corpus_from_manifest(path):
    entries = dataingest.read_manifest(path)
    return dataingest.Corpus(entries)


def cmd_train(args):
    cfg = _resolve_config(args)
    if args.iters is not None:
        cfg.train.max_iters = args.iters
    stats, model = _load_dim_artifacts(args.dim)
    corpus = _corpus_from_manifest(args.corpus)
    val = dataingest.load_paired(args.val).load() if args.val else []
    net = brightnet.load_unet(args.init) if args.init else brightnet.build_unet(cfg.net)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    net, history = trainer.train_unsupervised(net, corpus, model, stats, cfg.dim, cfg.train,
                                              _loss_config(cfg), val, dim_mode=args.mode,
                                              checkpoint_dir=out)
    brightnet.save_unet(net, out / "best.ckpt")
    history.write(out / "history.log")
    print(f"iters={len(history.steps)} best_iter={history.best_iter} best_val_psnr={history.best_psnr:.4f}")
    return 0


def cmd_finetune(args):
    cfg = _resolve_config(args)
    if args.iters is not None:
        cfg.finetune.max_iters = args.iters
    pairs = _load_pairs(args.pairs, args.subset).load()
    val = dataingest.load_paired(args.val).load() if args.val else []
    net = brightnet.load_unet(args.ckpt) if args.ckpt else brightnet.build_unet(cfg.net)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    net, history = trainer.finetune(net, pairs, cfg.finetune, _loss_config(cfg), val,
                                    checkpoint_dir=out)
    history.meta["init"] = args.ckpt or "scratch"
    brightnet.save_unet(net, out / "best.ckpt")
    history.write(out / "history.log")
    print(f"pairs={len(pairs)} iters={len(history.steps)} best_iter={history.best_iter}")
    return 0


def cmd_enhance(args):
    if not -1.0 <= args.lightness <= 1.0:
        raise UsageError("--lightness must lie in [-1, 1]")
    net = brightnet.load_unet(args.ckpt)
    src = Path(args.input)
    inputs = [src] if src.is_file() else sorted(
        p for p in src.iterdir() if p.is_file() and p.suffix.lower() in dataingest.IMAGE_SUFFIXES)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in inputs:
        result = brightnet.enhance(net, load_image(path), args.lightness)
        save_image(result.output, out / (path.stem + ".png"))
    print(f"enhanced={len(inputs)}")
    return 0


def cmd_eval(args):
    report = metrics.evaluate_dir(args.pred, args.gt, args.out)
    agg = report.aggregates
    print(" ".join(f"{k}={agg[k][0]:.4f}" for k in report.columns))
    return 0


def _probe(text):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed probe {text!r}")
    if len(vals) != 5 or not all(np.isfinite(vals)):
        raise argparse.ArgumentTypeError("probe needs five numbers r,g,b,l,ld")
    return vals


def cmd_inspect_mdn(args):
    model = mdn.load_mdn(args.mdn)
    offsets = np.linspace(-1.0, 1.0, args.points)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["channel", "offset", "value", "density"])
        for ch in range(3):
            curve = mdn.mdn_pdf_curve(model, args.probe, ch, args.probe[ch] + offsets)
            for off, (value, dens) in zip(offsets, curve):
                w.writerow([ch, repr(float(off)), repr(value), repr(dens)])
    return 0


def cmd_corpus(args):
    crop = tuple(int(v) for v in args.crop.split("x")) if args.crop else None
    min_w, min_h = (int(v) for v in args.min_size.split("x")) if args.min_size else (0, 0)
    max_w, max_h = (int(v) for v in args.max_size.split("x")) if args.max_size else (None, None)
    filt = dataingest.CorpusFilter(min_width=min_w, min_height=min_h, max_width=max_w,
                                   max_height=max_h, resize_factor=args.resize, center_crop=crop,
                                   reject_white_background=args.reject_white)
    entries = dataingest.build_corpus([(root, filt) for root in args.root])
    dataingest.write_manifest(entries, args.out)
    print(f"entries={len(entries)}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="dimma", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")

    sp = sub.add_parser("fit-dim", help="fit illumination stats and the MDN on real pairs")
    sp.add_argument("--pairs", required=True)
    sp.add_argument("--subset", help="file listing the pair filenames to use")
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int)
    common(sp)
    sp.set_defaults(func=cmd_fit_dim)

    sp = sub.add_parser("dim", help="dim a folder of light images")
    sp.add_argument("--input", required=True)
    sp.add_argument("--dim", required=True, help="folder with stats.txt and mdn.ckpt")
    sp.add_argument("--out", required=True)
    sp.add_argument("--gamma", type=float, help="fixed dimming factor")
    sp.add_argument("--alpha", type=float, help="temperature")
    sp.add_argument("--mode", choices=dimmer.MODES, default="mdn")
    common(sp)
    sp.set_defaults(func=cmd_dim)

    sp = sub.add_parser("train", help="unsupervised training on a dimmed corpus")
    sp.add_argument("--corpus", required=True, help="corpus manifest")
    sp.add_argument("--dim", required=True)
    sp.add_argument("--val", required=True, help="paired validation folder")
    sp.add_argument("--out", required=True)
    sp.add_argument("--iters", type=int)
    sp.add_argument("--init", help="start from this UNet checkpoint")
    sp.add_argument("--mode", choices=dimmer.MODES, default="mdn")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("finetune", help="finetune on real pairs")
    sp.add_argument("--pairs", required=True)
    sp.add_argument("--subset")
    sp.add_argument("--ckpt", help="UNet checkpoint; omitted means train from scratch")
    sp.add_argument("--val", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--iters", type=int)
    common(sp)
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("enhance", help="brighten images to a requested lightness gap")
    sp.add_argument("--input", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--lightness", type=float, required=True)
    sp.set_defaults(func=cmd_enhance)

    sp = sub.add_parser("eval", help="PSNR / SSIM / DeltaE report")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--out", required=True, help="CSV path; a .md table is written alongside")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("inspect-mdn", help="dump mixture densities for one probe pixel")
    sp.add_argument("--mdn", required=True)
    sp.add_argument("--probe", required=True, type=_probe, help="r,g,b,l,ld")
    sp.add_argument("--out", required=True)
    sp.add_argument("--points", type=int, default=201)
    sp.set_defaults(func=cmd_inspect_mdn)

    sp = sub.add_parser("corpus", help="build an unlabeled corpus manifest")
    sp.add_argument("--root", required=True, action="append")
    sp.add_argument("--out", required=True)
    sp.add_argument("--min-size", help="WxH")
    sp.add_argument("--max-size", help="WxH")
    sp.add_argument("--resize", type=float)
    sp.add_argument("--crop", help="WxH centre crop")
    sp.add_argument("--reject-white", action="store_true")
    sp.set_defaults(func=cmd_corpus)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidConfig) as exc:
        print(f"dimma {args.command}: {exc}", file=sys.stderr)
        return 2
    except (DimmaError, OSError, ValueError) as exc:
        print(f"dimma {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
