"""Run configuration files (YAML) and seed derivation."""

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .brightnet import NetConfig
from .errors import InvalidConfig
from .illumstats import DimConfig
from .mdn import MDNConfig
from .trainer import TrainConfig


def derive_seed(master, role):
    """Stable 32-bit seed for ``role`` under ``master``."""
    digest = hashlib.sha256(f"{int(master)}:{role}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass
class RunConfig:
    seed: int = 0
    mdn: MDNConfig = field(default_factory=MDNConfig)
    dim: DimConfig = field(default_factory=DimConfig)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig(max_iters=2000))
    perceptual_lambda: float = 0.1
    perceptual_model: str = None

    def reseed(self, seed=None):
        """Set every sub-config seed from the master seed."""
        if seed is not None:
            self.seed = int(seed)
        for role in ("mdn", "dim", "net", "train", "finetune"):
            getattr(self, role).seed = derive_seed(self.seed, role)
        return self

    def to_dict(self):
        return dataclasses.asdict(self)


def _build(cls, data, section):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise InvalidConfig(f"section {section!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known - {"preset"})
    if unknown:
        raise InvalidConfig(f"unknown keys in {section!r}: {', '.join(unknown)}")
    data = dict(data)
    preset = data.pop("preset", None)
    try:
        if preset is not None:
            if cls is not NetConfig or preset not in ("toy", "full"):
                raise InvalidConfig(f"unknown preset {preset!r} in {section!r}")
            return NetConfig.toy(**data) if preset == "toy" else NetConfig(**data)
        return cls(**data)
    except TypeError as exc:
        raise InvalidConfig(f"bad values in {section!r}: {exc}") from exc


SECTIONS = {"mdn": MDNConfig, "dim": DimConfig, "net": NetConfig,
            "train": TrainConfig, "finetune": TrainConfig}


def config_from_dict(data):
    data = dict(data or {})
    top = {"seed", "perceptual_lambda", "perceptual_model"} | set(SECTIONS)
    unknown = sorted(set(data) - top)
    if unknown:
        raise InvalidConfig(f"unknown top-level keys: {', '.join(unknown)}")
    cfg = RunConfig()
    for key, cls in SECTIONS.items():
        if key in data:
            section = data[key] or {}
            if not isinstance(section, dict):
                raise InvalidConfig(f"section {key!r} must be a mapping")
            section = dict(section)
            if key == "finetune":
                section.setdefault("max_iters", 2000)
            setattr(cfg, key, _build(cls, section, key))
    cfg.seed = int(data.get("seed", 0))
    cfg.perceptual_lambda = float(data.get("perceptual_lambda", 0.1))
    cfg.perceptual_model = data.get("perceptual_model")
    return cfg.reseed()


def load_config(path=None):
    if path is None:
        return RunConfig().reseed()
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise InvalidConfig(f"{path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise InvalidConfig(f"{path}: top level must be a mapping")
    return config_from_dict(data)
