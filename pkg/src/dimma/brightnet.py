"""Lightness-conditioned residual UNet.

Layout, for channel widths ``c_l = base * mults[l]`` at four resolutions
(full, 1/2, 1/4, 1/8)::

    conv_in 10 -> c_0
    encoder  level l: 2 residual blocks (same resolution), then a stride-2
             downsample for l < 3
    middle   residual block, multi-head self-attention, residual block (1/8)
    decoder  level l: concat skip l, 2 residual blocks, then nearest-neighbour
             upsample + conv for l > 0
    conv_out c_0 -> 3, sigmoid gives the residual map

The scalar lightness gap ``delta_m`` goes through sinusoidal features and a
two-layer MLP; each residual block adds its own linear projection of that
embedding to its feature maps, as diffusion UNets do with timesteps.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import read_checkpoint, write_checkpoint
from .errors import InvalidConfig
from .imagecore import check_image, hist_equalize
from .retinex import DEFAULT_EPS, R_MAX_SCALE, decompose

MAGIC = b"DIMMA-UNET\0"
N_LEVELS = 4
ALIGN = 2 ** (N_LEVELS - 1)
N_INPUT_CHANNELS = 10
EMBED_SCALE = 1000.0


@dataclass
class NetConfig:
    base_channels: int = 64
    channel_mults: list = field(default_factory=lambda: [1, 2, 4, 4])
    blocks_per_stage: int = 2
    attention: bool = True
    attention_heads: int = 64
    embed_dim: int = 256
    norm: str = "group"   # "group" or "none"
    norm_groups: int = 8
    seed: int = 0

    def __post_init__(self):
        self.channel_mults = [int(m) for m in self.channel_mults]
        if len(self.channel_mults) != N_LEVELS:
            raise InvalidConfig(f"channel_mults needs {N_LEVELS} entries")
        if self.base_channels < 1 or self.blocks_per_stage < 1 or min(self.channel_mults) < 1:
            raise InvalidConfig("widths and block counts must be positive")
        if self.embed_dim < 2 or self.embed_dim % 2:
            raise InvalidConfig("embed_dim must be a positive even integer")
        if self.norm not in ("group", "none"):
            raise InvalidConfig("norm must be 'group' or 'none'")
        widths = self.widths
        if self.attention and widths[-1] % self.attention_heads:
            raise InvalidConfig(f"{widths[-1]} bottleneck channels not divisible by "
                                f"{self.attention_heads} heads")
        if self.norm == "group":
            sums = widths + [widths[-1] * 2] + [widths[l] + widths[min(l + 1, N_LEVELS - 1)]
                                                for l in range(N_LEVELS)]
            if any(s % self.norm_groups for s in sums):
                raise InvalidConfig("norm_groups must divide every stage width")

    @property
    def widths(self):
        return [self.base_channels * m for m in self.channel_mults]

    @classmethod
    def toy(cls, **overrides):
        """Width-16 preset; attention heads scaled down with the width (64 * 16/64)."""
        kw = dict(base_channels=16, attention_heads=16, embed_dim=64)
        kw.update(overrides)
        return cls(**kw)


@dataclass
class EnhanceResult:
    output: np.ndarray
    residual: np.ndarray


def lightness_features(delta_m, embed_dim):
    """Raw sin/cos features of the lightness gap, shape (B, embed_dim)."""
    delta_m = torch.as_tensor(delta_m, dtype=torch.float32).reshape(-1)
    half = embed_dim // 2
    freqs = EMBED_SCALE * torch.pow(10000.0, -2.0 * torch.arange(half, dtype=torch.float32) / embed_dim)
    angles = delta_m[:, None] * freqs[None, :]
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)


def _norm(cfg, channels):
    if cfg.norm == "group":
        return nn.GroupNorm(cfg.norm_groups, channels)
    return nn.Identity()


class ResBlock(nn.Module):
    def __init__(self, cfg, c_in, c_out):
        super().__init__()
        self.norm1 = _norm(cfg, c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.emb_proj = nn.Linear(cfg.embed_dim, c_out)
        self.norm2 = _norm(cfg, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb_proj(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class SelfAttention(nn.Module):
    def __init__(self, cfg, channels):
        super().__init__()
        self.norm = _norm(cfg, channels)
        self.attn = nn.MultiheadAttention(channels, cfg.attention_heads, batch_first=True)

    def forward(self, x):
        b, c, h, w = x.shape
        tokens = self.norm(x).flatten(2).transpose(1, 2)
        out, _ = self.attn(tokens, tokens, tokens, need_weights=False)
        return x + out.transpose(1, 2).reshape(b, c, h, w)


class Stage(nn.Module):
    def __init__(self, cfg, c_in, c_out):
        super().__init__()
        self.blocks = nn.ModuleList(
            ResBlock(cfg, c_in if i == 0 else c_out, c_out) for i in range(cfg.blocks_per_stage))

    def forward(self, x, emb):
        for block in self.blocks:
            x = block(x, emb)
        return x


class BrightUNet(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = cfg = config
        widths = cfg.widths
        d = cfg.embed_dim
        self.embed = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.conv_in = nn.Conv2d(N_INPUT_CHANNELS, widths[0], 3, padding=1)
        self.enc = nn.ModuleList()
        self.down = nn.ModuleList()
        c = widths[0]
        for lvl in range(N_LEVELS):
            self.enc.append(Stage(cfg, c, widths[lvl]))
            c = widths[lvl]
            if lvl < N_LEVELS - 1:
                self.down.append(nn.Conv2d(c, c, 3, stride=2, padding=1))
        self.mid1 = ResBlock(cfg, c, c)
        self.mid_attn = SelfAttention(cfg, c) if cfg.attention else None
        self.mid2 = ResBlock(cfg, c, c)
        self.dec = nn.ModuleList()
        self.up = nn.ModuleList()
        for lvl in reversed(range(N_LEVELS)):
            self.dec.append(Stage(cfg, c + widths[lvl], widths[lvl]))
            c = widths[lvl]
            if lvl > 0:
                self.up.append(nn.Conv2d(c, c, 3, padding=1))
        self.norm_out = _norm(cfg, c)
        self.conv_out = nn.Conv2d(c, 3, 3, padding=1)

    def forward(self, x, delta_m):
        """(B, 10, H, W) input and (B,) lightness gaps -> (B, 3, H, W) logits."""
        emb = F.silu(self.embed(lightness_features(delta_m, self.config.embed_dim).to(x.dtype)))
        h = self.conv_in(x)
        skips = []
        for lvl in range(N_LEVELS):
            h = self.enc[lvl](h, emb)
            skips.append(h)
            if lvl < N_LEVELS - 1:
                h = self.down[lvl](h)
        h = self.mid1(h, emb)
        if self.mid_attn is not None:
            h = self.mid_attn(h)
        h = self.mid2(h, emb)
        for i, lvl in enumerate(reversed(range(N_LEVELS))):
            h = self.dec[i](torch.cat([h, skips[lvl]], dim=1), emb)
            if lvl > 0:
                h = self.up[i](F.interpolate(h, scale_factor=2, mode="nearest"))
        return self.conv_out(F.silu(self.norm_out(h)))

    def residual(self, x, delta_m):
        return torch.sigmoid(self(x, delta_m))


def build_unet(cfg):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(cfg.seed))
        net = BrightUNet(cfg)
    return net


def embed_lightness(delta_m, embed_dim, params=None):
    """Sinusoidal features of ``delta_m``; passed through the net's MLP when
    ``params`` is given."""
    feats = lightness_features([float(delta_m)], embed_dim)
    if params is not None:
        with torch.no_grad():
            feats = params.embed(feats)
    return feats[0].double().numpy()


def assemble_input(dark, epsilon=DEFAULT_EPS):
    """(H, W, 10): dark | hist-equalized dark | reflectance / 3 | illumination."""
    dark = check_image(dark, "dark")
    pair = decompose(dark, epsilon)
    return np.concatenate([dark, hist_equalize(dark), pair.reflectance / R_MAX_SCALE,
                           pair.illumination], axis=2)


def pad_to_multiple(arr, multiple=ALIGN):
    h, w = arr.shape[:2]
    ph, pw = (-h) % multiple, (-w) % multiple
    if not (ph or pw):
        return arr
    pad = [(0, ph), (0, pw)] + [(0, 0)] * (arr.ndim - 2)
    return np.pad(arr, pad, mode="reflect" if min(h, w) > 1 else "edge")


def to_batch(inputs):
    """(B, H, W, C) or (H, W, C) numpy -> (B, C, H, W) float32 tensor."""
    arr = np.asarray(inputs, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def enhance(params, dark, delta_m):
    if not -1.0 <= delta_m <= 1.0:
        raise ValueError("delta_m must lie in [-1, 1]")
    dark = check_image(dark, "dark")
    h, w = dark.shape[:2]
    x = to_batch(pad_to_multiple(assemble_input(dark)))
    with torch.no_grad():
        res = params.residual(x, torch.tensor([float(delta_m)]))
    residual = res[0, :, :h, :w].permute(1, 2, 0).double().numpy()
    return EnhanceResult(output=np.clip(dark + residual, 0.0, 1.0), residual=residual)


def param_count(net):
    return sum(p.numel() for p in net.parameters())


def save_unet(net, path):
    write_checkpoint(path, MAGIC, asdict(net.config), net.state_dict())


def load_unet(path):
    config, state = read_checkpoint(path, MAGIC)
    net = BrightUNet(NetConfig(**config))
    net.load_state_dict(state)
    net.eval()
    return net
