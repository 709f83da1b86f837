"""Network assembly: prior feature pyramids, hierarchical dual-prior fusion and output heads.

Level ``k`` of a pyramid has spatial size ``input / 2**k``. With ``L`` levels
(default 6, i.e. levels 0..5):

* TPFEN turns ``(I, T_prior)`` into a dual-stream pyramid: a 3x3 stem per
  stream, MuGI blocks at every level and stride-2 convolutions in between.
* GPFEN produces single-stream general-prior maps at levels ``2..L-1`` (a toy
  convolutional encoder by default; any extractor returning those levels can
  be plugged in).
* Same-layer fusion at each general-prior level pixel-shuffles both inputs
  (2x up, channels / 4) and runs an interaction block with the general prior
  as the first stream and each transmission stream as the second.
* Cross-layer fusion walks down from the top level: the upper result is
  upsampled (conv + pixel shuffle), optionally passed through MuGI, merged to
  one guidance map by a 1x1 conv over the concatenated pair, and fused with
  the current same-layer pair by the interaction block.
* Levels 1 and 0 have no general prior and are merged by concatenation and
  convolution; level 0 also takes the stem features.
* Heads: MuGI at level 0, one conv for (T, R) and the learnable residue
  module for the nonlinear residual.

Interaction blocks return a pair; the fused map for a stream is the block's
second output (the stream that was being refined).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import _flops
from .baselines import MuGIBlock, make_block
from .errors import ConfigurationError
from .llcm import LLCN


class SeparationOutput(NamedTuple):
    T_hat: torch.Tensor
    R_hat: torch.Tensor
    Phi_hat: torch.Tensor


@dataclass
class NetworkConfig:
    channels: tuple = (16, 32, 64, 96, 128, 160)
    gp_channels: Optional[tuple] = None
    window_size: int = 4
    num_heads: int = 2
    ffn_expansion: int = 2
    blocks_per_site: int = 1
    mugi_blocks: int = 1
    interaction: str = "dscrab"

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) < 3:
            raise ConfigurationError("need at least 3 pyramid levels (general priors start at level 2)")
        if self.gp_channels is None:
            self.gp_channels = self.channels[2:]
        self.gp_channels = tuple(int(c) for c in self.gp_channels)
        if len(self.gp_channels) != len(self.gp_levels):
            raise ConfigurationError(f"gp_channels must list levels {list(self.gp_levels)}")
        for k, (ct, cg) in zip(self.gp_levels, zip(self.channels[2:], self.gp_channels)):
            if ct != cg:
                raise ConfigurationError(
                    f"level {k}: general prior has {cg} channels but transmission prior {ct}; "
                    "they must match after pixel shuffle"
                )
            if ct % 8:
                raise ConfigurationError(f"level {k}: {ct} channels; need a multiple of 8 (shuffle /4, then even)")
            if self.interaction in ("dscrab", "daib") and (ct // 4) % self.num_heads:
                raise ConfigurationError(f"level {k}: {ct // 4} fused channels not divisible by {self.num_heads} heads")
        if self.blocks_per_site < 1 or self.mugi_blocks < 0:
            raise ConfigurationError("blocks_per_site must be >= 1 and mugi_blocks >= 0")

    @property
    def levels(self) -> int:
        return len(self.channels)

    @property
    def gp_levels(self) -> range:
        return range(2, len(self.channels))

    @property
    def multiple(self) -> int:
        """Input side lengths must be multiples of this (inputs are padded up to it)."""
        top = self.levels - 1
        return math.lcm(2 ** top, 2 ** (top - 1) * self.window_size)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["gp_channels"] = list(self.gp_channels)
        return d


def pad_to_multiple(x: torch.Tensor, multiple: int):
    """Reflect-pad the bottom/right of ``x`` up to a multiple; returns ``(padded, (H, W))``."""
    H, W = x.shape[-2:]
    ph, pw = (-H) % multiple, (-W) % multiple
    if ph or pw:
        mode = "reflect" if ph < H and pw < W else "replicate"
        x = F.pad(x, (0, pw, 0, ph), mode=mode)
    return x, (H, W)


class _PairConv(nn.Module):
    """Separate convolutions for the two streams."""

    def __init__(self, c_in, c_out, k=3, stride=1):
        super().__init__()
        self.l = nn.Conv2d(c_in, c_out, k, stride=stride, padding=k // 2)
        self.r = nn.Conv2d(c_in, c_out, k, stride=stride, padding=k // 2)

    def forward(self, left, right):
        return self.l(left), self.r(right)

    def flops(self, shape):
        f, out = _flops.conv2d(self.l, shape)
        return 2 * f, out


class _MuGIStack(nn.Module):
    def __init__(self, dim, n):
        super().__init__()
        self.blocks = nn.ModuleList(MuGIBlock(dim) for _ in range(n))

    def forward(self, left, right):
        for blk in self.blocks:
            left, right = blk(left, right)
        return left, right

    def flops(self, shape):
        return sum(b.flops(shape) for b in self.blocks)


class _BlockStack(nn.Module):
    """``n`` interaction blocks applied in sequence to a pair."""

    def __init__(self, kind, dim, cfg: NetworkConfig):
        super().__init__()
        self.blocks = nn.ModuleList(
            make_block(kind, dim, cfg.window_size, cfg.num_heads, cfg.ffn_expansion) for _ in range(cfg.blocks_per_site)
        )

    def forward(self, left, right):
        for blk in self.blocks:
            left, right = blk(left, right)
        return left, right

    def flops(self, shape):
        return sum(b.flops(shape) for b in self.blocks)


class _Upsample(nn.Module):
    """Sub-pixel 2x upsampling: 1x1 conv to ``4 * c_out`` channels then pixel shuffle."""

    def __init__(self, c_in, c_out):
        super().__init__()
        self.conv = nn.Conv2d(c_in, 4 * c_out, 1)
        self.shuffle = nn.PixelShuffle(2)

    def forward(self, x):
        return self.shuffle(self.conv(x))

    def flops(self, shape):
        f, out = _flops.conv2d(self.conv, shape)
        return f, (out[0] // 4, out[1] * 2, out[2] * 2)


class TPFEN(nn.Module):
    """Dual-stream transmission-prior pyramid."""

    def __init__(self, cfg: NetworkConfig, tie_stem: bool = False):
        super().__init__()
        ch = cfg.channels
        self.stem_l = nn.Conv2d(3, ch[0], 3, padding=1)
        self.stem_r = self.stem_l if tie_stem else nn.Conv2d(3, ch[0], 3, padding=1)
        self.mugi = nn.ModuleList(_MuGIStack(c, cfg.mugi_blocks) for c in ch)
        self.down = nn.ModuleList(_PairConv(ch[k - 1], ch[k], 3, stride=2) for k in range(1, len(ch)))

    def forward(self, I, T_prior):
        """Returns ``(stem_pair, [pair_level_0, ..., pair_level_{L-1}])``."""
        if I.shape != T_prior.shape:
            raise ValueError(f"TPFEN inputs differ: {tuple(I.shape)} vs {tuple(T_prior.shape)}")
        H, W = I.shape[-2:]
        m = 2 ** (len(self.mugi) - 1)
        if H % m or W % m:
            raise ValueError(f"input {H}x{W} not divisible by 2**{len(self.mugi) - 1}; pad first")
        stem = (self.stem_l(I), self.stem_r(T_prior))
        pair = self.mugi[0](*stem)
        levels = [pair]
        for down, mugi in zip(self.down, self.mugi[1:]):
            pair = mugi(*down(*pair))
            levels.append(pair)
        return stem, levels

    def flops(self, shape):
        f, s = _flops.conv2d(self.stem_l, shape)
        total = 2 * f + self.mugi[0].flops(s)
        for down, mugi in zip(self.down, self.mugi[1:]):
            f, s = down.flops(s)
            total += f + mugi.flops(s)
        return total


class ToyGeneralEncoder(nn.Module):
    """Small convolutional encoder emitting general-prior maps at levels 2..L-1."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        gp = cfg.gp_channels
        self.levels = tuple(cfg.gp_levels)
        first = nn.Sequential(
            nn.Conv2d(3, max(gp[0] // 2, 1), 3, stride=2, padding=1), nn.GELU(),
            nn.Conv2d(max(gp[0] // 2, 1), gp[0], 3, stride=2, padding=1), nn.GELU(),
        )
        rest = [nn.Sequential(nn.Conv2d(gp[i - 1], gp[i], 3, stride=2, padding=1), nn.GELU()) for i in range(1, len(gp))]
        self.stages = nn.ModuleList([first] + rest)

    def forward(self, I):
        out = {}
        x = I
        for k, stage in zip(self.levels, self.stages):
            x = stage(x)
            out[k] = x
        return out

    def flops(self, shape):
        total = 0
        for stage in self.stages:
            f, shape = _flops.layer(stage, shape)
            total += f
        return total


class GPFEN(nn.Module):
    """General-prior feature pyramid with a pluggable extractor.

    ``extractor(I)`` must return a mapping (or sequence) of maps for levels
    ``2..L-1`` with the configured channel widths.
    """

    def __init__(self, cfg: NetworkConfig, extractor=None):
        super().__init__()
        self.cfg = cfg
        self.extractor = extractor if extractor is not None else ToyGeneralEncoder(cfg)

    def forward(self, I):
        feats = self.extractor(I)
        if not isinstance(feats, dict):
            feats = dict(zip(self.cfg.gp_levels, feats))
        if sorted(feats) != list(self.cfg.gp_levels):
            raise ConfigurationError(f"general prior extractor returned levels {sorted(feats)}, need {list(self.cfg.gp_levels)}")
        H = I.shape[-2]
        for k, c in zip(self.cfg.gp_levels, self.cfg.gp_channels):
            f = feats[k]
            if f.shape[1] != c or f.shape[-2] != H // 2 ** k:
                raise ConfigurationError(f"general prior level {k}: got {tuple(f.shape)}, need {c} channels at {H // 2 ** k}px")
        return feats

    def flops(self, shape):
        return self.extractor.flops(shape) if hasattr(self.extractor, "flops") else 0


class SameLayerFusion(nn.Module):
    def __init__(self, dim: int, cfg: NetworkConfig):
        super().__init__()
        if dim % 4:
            raise ConfigurationError(f"pixel shuffle needs channels divisible by 4, got {dim}")
        self.shuffle = nn.PixelShuffle(2)
        self.block = _BlockStack(cfg.interaction, dim // 4, cfg)

    def forward(self, g, pair):
        g_up = self.shuffle(g)
        t_l, t_r = self.shuffle(pair[0]), self.shuffle(pair[1])
        if g_up.shape != t_l.shape:
            raise ConfigurationError(f"same-layer fusion: general {tuple(g_up.shape)} vs transmission {tuple(t_l.shape)}")
        return self.block(g_up, t_l)[1], self.block(g_up, t_r)[1]

    def flops(self, shape):
        c, h, w = shape
        return 2 * self.block.flops((c // 4, 2 * h, 2 * w))


class CrossLayerFusion(nn.Module):
    def __init__(self, c_upper: int, dim: int, cfg: NetworkConfig, with_mugi: bool):
        super().__init__()
        self.up_l = _Upsample(c_upper, dim)
        self.up_r = _Upsample(c_upper, dim)
        self.mugi = _MuGIStack(dim, cfg.mugi_blocks) if with_mugi else None
        self.merge = nn.Conv2d(2 * dim, dim, 1)
        self.block = _BlockStack(cfg.interaction, dim, cfg)

    def forward(self, upper, same):
        ul, ur = self.up_l(upper[0]), self.up_r(upper[1])
        if self.mugi is not None:
            ul, ur = self.mugi(ul, ur)
        guide = self.merge(torch.cat([ul, ur], dim=1))
        if guide.shape != same[0].shape:
            raise ConfigurationError(f"cross-layer fusion: guidance {tuple(guide.shape)} vs features {tuple(same[0].shape)}")
        return self.block(guide, same[0])[1], self.block(guide, same[1])[1]

    def flops(self, upper_shape):
        f, s = self.up_l.flops(upper_shape)
        total = 2 * f
        if self.mugi is not None:
            total += self.mugi.flops(s)
        total += _flops.conv2d(self.merge, (2 * s[0], s[1], s[2]))[0]
        return total + 2 * self.block.flops(s)


class LRM(nn.Module):
    """Learnable residue module: 3x3 conv, sigmoid gate over channel halves, 3x3 conv."""

    def __init__(self, dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(dim, 2 * dim, 3, padding=1)
        self.conv2 = nn.Conv2d(dim, 3, 3, padding=1)

    def forward(self, x):
        a, b = self.conv1(x).chunk(2, dim=1)
        return self.conv2(a * torch.sigmoid(b))

    def flops(self, shape):
        c, h, w = shape
        n = c * h * w
        return _flops.conv2d(self.conv1, shape)[0] + 2 * n + _flops.conv2d(self.conv2, shape)[0]


class Heads(nn.Module):
    def __init__(self, dim: int, cfg: NetworkConfig):
        super().__init__()
        self.mugi = _MuGIStack(dim, max(cfg.mugi_blocks, 1))
        self.out = nn.Conv2d(2 * dim, 6, 3, padding=1)
        self.lrm = LRM(2 * dim)

    def forward(self, pair) -> SeparationOutput:
        l, r = self.mugi(*pair)
        x = torch.cat([l, r], dim=1)
        T_hat, R_hat = self.out(x).chunk(2, dim=1)
        return SeparationOutput(T_hat, R_hat, self.lrm(x))

    def flops(self, shape):
        c, h, w = shape
        both = (2 * c, h, w)
        return self.mugi.flops(shape) + _flops.conv2d(self.out, both)[0] + self.lrm.flops(both)


class DSCRT(nn.Module):
    """Dual-stream channel reorganization transformer (the separation network without LLCN).

    ``forward(I, T_prior=None)``: without a transmission prior the mixed image
    feeds both streams.
    """

    def __init__(self, cfg: Optional[NetworkConfig] = None, gp_extractor=None, tie_stem: bool = False):
        super().__init__()
        self.cfg = cfg = cfg or NetworkConfig()
        ch = cfg.channels
        top = cfg.levels - 1
        self.tpfen = TPFEN(cfg, tie_stem=tie_stem)
        self.gpfen = GPFEN(cfg, gp_extractor)
        self.same = nn.ModuleDict({str(k): SameLayerFusion(ch[k], cfg) for k in cfg.gp_levels})
        self.cross = nn.ModuleDict({
            str(k): CrossLayerFusion(ch[k + 1] // 4, ch[k] // 4, cfg, with_mugi=(k + 1 < top))
            for k in reversed(cfg.gp_levels) if k < top
        })
        self.merge1 = _PairConv(ch[2] // 4 + ch[1], ch[1], 3)
        self.up0 = _Upsample(ch[1], ch[0])
        self.up0_r = _Upsample(ch[1], ch[0])
        self.merge0 = _PairConv(3 * ch[0], ch[0], 3)
        self.heads = Heads(ch[0], cfg)

    @property
    def multiple(self) -> int:
        return self.cfg.multiple

    def fuse(self, I, T_prior):
        """Pyramid extraction and hierarchical fusion; returns the level-0 pair."""
        stem, tp = self.tpfen(I, T_prior)
        gp = self.gpfen(I)
        top = self.cfg.levels - 1
        fused = None
        for k in reversed(self.cfg.gp_levels):
            same = self.same[str(k)](gp[k], tp[k])
            fused = same if k == top else self.cross[str(k)](fused, same)
        f1 = self.merge1(torch.cat([fused[0], tp[1][0]], 1), torch.cat([fused[1], tp[1][1]], 1))
        u_l, u_r = self.up0(f1[0]), self.up0_r(f1[1])
        return self.merge0(torch.cat([u_l, tp[0][0], stem[0]], 1), torch.cat([u_r, tp[0][1], stem[1]], 1))

    def forward(self, I, T_prior=None) -> SeparationOutput:
        if T_prior is None:
            T_prior = I
        if I.shape != T_prior.shape:
            raise ValueError(f"I {tuple(I.shape)} and T_prior {tuple(T_prior.shape)} differ")
        x, (H, W) = pad_to_multiple(I, self.multiple)
        t, _ = pad_to_multiple(T_prior, self.multiple)
        out = self.heads(self.fuse(x, t))
        return SeparationOutput(*(o[..., :H, :W] for o in out))

    def breakdown(self, shape) -> list:
        """``(name, params, flops)`` rows for the network's parts on a ``(3, H, W)`` input."""
        _, H, W = shape
        m = self.multiple
        H, W = H + (-H) % m, W + (-W) % m
        ch = self.cfg.channels
        top = self.cfg.levels - 1
        size = lambda k: (H // 2 ** k, W // 2 ** k)

        def params(mod):
            return sum(p.numel() for p in mod.parameters() if p.requires_grad)

        rows = [("tpfen", params(self.tpfen), self.tpfen.flops((3, H, W))),
                ("gpfen", params(self.gpfen), self.gpfen.flops((3, H, W)))]
        for k in reversed(self.cfg.gp_levels):
            rows.append((f"same{k}", params(self.same[str(k)]), self.same[str(k)].flops((ch[k], *size(k)))))
            if k < top:
                mod = self.cross[str(k)]
                rows.append((f"cross{k}", params(mod), mod.flops((ch[k + 1] // 4, *size(k + 1)))))
        h1, w1 = size(1)
        f_m1 = self.merge1.flops((ch[2] // 4 + ch[1], h1, w1))[0]
        f_up = 2 * self.up0.flops((ch[1], h1, w1))[0]
        f_m0 = self.merge0.flops((3 * ch[0], H, W))[0]
        rows.append(("merge", params(self.merge1) + params(self.up0) + params(self.up0_r) + params(self.merge0),
                     f_m1 + f_up + f_m0))
        rows.append(("heads", params(self.heads), self.heads.flops((ch[0], H, W))))
        return rows

    def flops(self, shape) -> int:
        return sum(r[2] for r in self.breakdown(shape))


class DPIT(nn.Module):
    """LLCN transmission prior followed by the separation network."""

    def __init__(self, llcn: Optional[LLCN] = None, dscrt: Optional[DSCRT] = None):
        super().__init__()
        self.llcn = llcn if llcn is not None else LLCN()
        self.dscrt = dscrt if dscrt is not None else DSCRT()

    @property
    def multiple(self) -> int:
        return math.lcm(self.llcn.multiple, self.dscrt.multiple)

    def forward(self, I):
        """Returns ``(SeparationOutput, T_prior)``, both cropped to the input size."""
        x, (H, W) = pad_to_multiple(I, self.multiple)
        t_prior = self.llcn(x)
        out = self.dscrt(x, t_prior)
        crop = lambda t: t[..., :H, :W]
        return SeparationOutput(*(crop(o) for o in out)), crop(t_prior)


def tpfen_forward(I, T_prior, net: DSCRT):
    return net.tpfen(I, T_prior)


def gpfen_forward(I, net: DSCRT):
    return net.gpfen(I)


def same_layer_fuse(g, pair, module: SameLayerFusion):
    return module(g, pair)


def cross_layer_fuse(upper, same, module: CrossLayerFusion):
    return module(upper, same)


def heads_forward(pair, module: Heads) -> SeparationOutput:
    return module(pair)


def dpit_forward(I, model: DPIT):
    return model(I)
