"""Paired dataset discovery (``low/`` + ``high/``) and unlabeled corpus manifests."""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (DimensionMismatch, EmptyDataset, InvalidConfig, MissingSubdir,
                     UnknownFilename)
from .imagecore import load_image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}

# LOL training-split files used for the 3/5/8-pair experiments
FEW_SHOT_SUBSETS = {
    1: ["2.png", "5.png", "6.png", "9.png", "10.png", "12.png", "13.png", "14.png"],
    2: ["17.png", "18.png", "21.png", "24.png", "25.png", "26.png", "27.png", "28.png"],
    3: ["36.png", "38.png", "39.png", "40.png", "42.png", "43.png", "44.png", "46.png"],
    4: ["50.png", "51.png", "52.png", "53.png", "54.png", "56.png", "57.png", "58.png"],
    5: ["61.png", "62.png", "63.png", "64.png", "67.png", "68.png", "69.png", "70.png"],
}


def few_shot_files(experiment, n_pairs):
    if n_pairs not in (3, 5, 8):
        raise ValueError("few-shot subsets exist for 3, 5 or 8 pairs")
    return FEW_SHOT_SUBSETS[experiment][:n_pairs]


@dataclass
class PairedDataset:
    pairs: list  # (light_path, dark_path)
    name: str = ""

    def __len__(self):
        return len(self.pairs)

    @property
    def filenames(self):
        return [Path(light).name for light, _ in self.pairs]

    def load(self):
        """List of (light, dark) image arrays."""
        return [(load_image(l), load_image(d)) for l, d in self.pairs]


def _image_files(path):
    return {p.name: p for p in Path(path).iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES}


def _size(path):
    with Image.open(path) as im:
        return im.size


def load_paired(root):
    root = Path(root)
    for sub in ("low", "high"):
        if not (root / sub).is_dir():
            raise MissingSubdir(f"{root / sub} is missing")
    low, high = _image_files(root / "low"), _image_files(root / "high")
    for name in sorted(set(low) ^ set(high)):
        log.warning("%s has no counterpart in %s; skipped", name, root)
    pairs = []
    for name in sorted(set(low) & set(high)):
        if _size(low[name]) != _size(high[name]):
            raise DimensionMismatch(f"{name}: low {_size(low[name])} vs high {_size(high[name])}")
        pairs.append((high[name], low[name]))
    if not pairs:
        raise EmptyDataset(f"no matched pairs under {root}")
    return PairedDataset(pairs, root.name)


def select_subset(ds, filenames):
    by_name = {Path(light).name: (light, dark) for light, dark in ds.pairs}
    for name in filenames:
        if name not in by_name:
            raise UnknownFilename(f"{name} is not in dataset {ds.name!r}")
    return PairedDataset([by_name[n] for n in filenames], ds.name)


def read_subset_file(path):
    return [ln.strip() for ln in Path(path).read_text().splitlines()
            if ln.strip() and not ln.lstrip().startswith("#")]


@dataclass
class CorpusFilter:
    min_width: int = 0
    min_height: int = 0
    max_width: int = None
    max_height: int = None
    resize_factor: float = None
    center_crop: tuple = None
    reject_white_background: bool = False
    white_threshold: float = 0.95
    white_frame: int = 16

    def __post_init__(self):
        if self.max_width is not None and self.min_width > self.max_width:
            raise InvalidConfig("min_width exceeds max_width")
        if self.max_height is not None and self.min_height > self.max_height:
            raise InvalidConfig("min_height exceeds max_height")
        if self.resize_factor is not None and not 0 < self.resize_factor <= 1:
            raise InvalidConfig("resize_factor must lie in (0, 1]")
        if self.center_crop is not None:
            self.center_crop = tuple(int(v) for v in self.center_crop)

    def passes_gates(self, width, height):
        if width < self.min_width or height < self.min_height:
            return False
        if self.max_width is not None and width > self.max_width:
            return False
        if self.max_height is not None and height > self.max_height:
            return False
        return True


@dataclass
class CorpusEntry:
    path: str
    resize: tuple = None  # (w, h)
    crop: tuple = None    # (w, h), centred

    def spec(self):
        parts = []
        if self.resize:
            parts.append(f"resize={self.resize[0]}x{self.resize[1]}")
        if self.crop:
            parts.append(f"crop={self.crop[0]}x{self.crop[1]}")
        return ";".join(parts) or "-"

    @classmethod
    def parse(cls, line):
        path, _, spec = line.rstrip("\n").rpartition(" ")
        if not path:
            raise ValueError(f"malformed manifest line: {line!r}")
        entry = cls(path)
        if spec != "-":
            for part in spec.split(";"):
                key, _, val = part.partition("=")
                w, h = (int(v) for v in val.split("x"))
                if key == "resize":
                    entry.resize = (w, h)
                elif key == "crop":
                    entry.crop = (w, h)
                else:
                    raise ValueError(f"unknown transform {key!r}")
        return entry

    def load(self):
        with Image.open(self.path) as im:
            im = im.convert("RGB")
            if self.resize:
                im = im.resize(self.resize, Image.BICUBIC)
            if self.crop:
                w, h = im.size
                cw, ch = self.crop
                left, top = (w - cw) // 2, (h - ch) // 2
                im = im.crop((left, top, left + cw, top + ch))
            return np.asarray(im, dtype=np.float64) / 255.0


def _planned(path, width, height, filt):
    entry = CorpusEntry(str(path))
    if filt.resize_factor is not None and filt.resize_factor != 1:
        width = max(1, int(round(width * filt.resize_factor)))
        height = max(1, int(round(height * filt.resize_factor)))
        entry.resize = (width, height)
    if filt.center_crop is not None:
        cw, ch = filt.center_crop
        if cw > width or ch > height:
            return None
        entry.crop = (cw, ch)
    return entry


def has_white_background(img, threshold=0.95, frame=16):
    h, w = img.shape[:2]
    f = max(1, min(frame, h // 2, w // 2))
    mask = np.zeros((h, w), dtype=bool)
    mask[:f], mask[-f:], mask[:, :f], mask[:, -f:] = True, True, True, True
    return float(img.mean(axis=2)[mask].mean()) > threshold


def build_corpus(roots):
    """Walk each ``(root, CorpusFilter)`` and return the accepted CorpusEntry list."""
    entries = []
    for root, filt in roots:
        for path in sorted(p for p in Path(root).rglob("*")
                           if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES):
            try:
                width, height = _size(path)
            except OSError:
                log.warning("unreadable image %s; skipped", path)
                continue
            if not filt.passes_gates(width, height):
                continue
            entry = _planned(path, width, height, filt)
            if entry is None:
                continue
            if filt.reject_white_background and has_white_background(
                    entry.load(), filt.white_threshold, filt.white_frame):
                continue
            entries.append(entry)
    return entries


def write_manifest(entries, path):
    Path(path).write_text("".join(f"{e.path} {e.spec()}\n" for e in entries))


def read_manifest(path):
    return [CorpusEntry.parse(ln) for ln in Path(path).read_text().splitlines() if ln.strip()]


class Corpus:
    """Lazy, cached sequence of corpus images."""

    def __init__(self, entries, cache_size=256):
        self.entries = list(entries)
        self._load = lru_cache(maxsize=cache_size)(lambda i: self.entries[i].load())

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i):
        return self._load(int(i))

