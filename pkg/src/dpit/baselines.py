"""Interchangeable dual-stream interaction blocks for the ablation grid.

Every block maps a ``(left, right)`` pair of ``[B, C, H, W]`` maps to a pair of
the same shape. ``MLPBlock``, ``YTMTBlock`` and ``MuGIBlock`` are compact
stand-ins for the published designs they are named after, kept only faithful
enough to compare interfaces and costs. ``DAIB`` is the dual-attention
interaction block: self- and cross-attention on both streams (four window
attentions per call) with the same feed-forward stage as :class:`~dpit.dscra.DSCRAB`.
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import _flops
from .dscra import DSCRAB, DualStreamFFN, WindowAttention, window_partition, window_reverse
from .errors import ConfigurationError


class MLPBlock(nn.Module):
    """Per-stream pointwise MLP with a residual; no exchange between streams."""

    def __init__(self, dim: int, expansion: int = 2):
        super().__init__()
        self.mlp_l = nn.Sequential(nn.Conv2d(dim, dim * expansion, 1), nn.GELU(), nn.Conv2d(dim * expansion, dim, 1))
        self.mlp_r = nn.Sequential(nn.Conv2d(dim, dim * expansion, 1), nn.GELU(), nn.Conv2d(dim * expansion, dim, 1))

    def forward(self, left, right):
        return left + self.mlp_l(left), right + self.mlp_r(right)

    def flops(self, shape) -> int:
        n = shape[0] * shape[1] * shape[2]
        return 2 * (_flops.layer(self.mlp_l, shape)[0] + n)


class YTMTBlock(nn.Module):
    """Negative-part exchange: each stream keeps its ReLU part and receives the other's remainder."""

    def __init__(self, dim: int):
        super().__init__()
        self.conv_l = nn.Conv2d(dim, dim, 3, padding=1)
        self.conv_r = nn.Conv2d(dim, dim, 3, padding=1)

    @staticmethod
    def exchange(left, right):
        pl, pr = F.relu(left), F.relu(right)
        return pl + (right - pr), pr + (left - pl)

    def forward(self, left, right):
        xl, xr = self.exchange(left, right)
        return xl + self.conv_l(xl), xr + self.conv_r(xr)

    def flops(self, shape) -> int:
        n = shape[0] * shape[1] * shape[2]
        exchange = 2 * (n + n + n)  # relu, subtract, add per stream
        return exchange + 2 * (_flops.conv2d(self.conv_l, shape)[0] + n)


class MuGIBlock(nn.Module):
    """Mutual sigmoid gating: ``x * sigmoid(conv(other)) + x`` followed by a per-stream 1x1 conv."""

    def __init__(self, dim: int):
        super().__init__()
        self.gate_l = nn.Conv2d(dim, dim, 3, padding=1)
        self.gate_r = nn.Conv2d(dim, dim, 3, padding=1)
        self.out_l = nn.Conv2d(dim, dim, 1)
        self.out_r = nn.Conv2d(dim, dim, 1)

    def forward(self, left, right):
        gl = left * torch.sigmoid(self.gate_l(right)) + left
        gr = right * torch.sigmoid(self.gate_r(left)) + right
        return self.out_l(gl), self.out_r(gr)

    def flops(self, shape) -> int:
        n = shape[0] * shape[1] * shape[2]
        per_stream = _flops.conv2d(self.gate_l, shape)[0] + 3 * n + _flops.conv2d(self.out_l, shape)[0]
        return 2 * per_stream


class DAIB(nn.Module):
    """Dual-attention interaction block.

    For each stream, self-attention over its own windows plus cross-attention
    that queries the other stream; the two are summed and projected. Weights
    of the self and cross attentions are shared between the streams, which
    gives the same parameter count as DSCRAB at equal width.
    """

    attention_evaluations = 4

    def __init__(self, dim: int, window_size: int = 4, num_heads: int = 2, ffn_expansion: int = 2,
                 alpha: float = 0.1, beta: float = 0.1):
        super().__init__()
        self.dim = dim
        self.window_size = window_size
        self.num_heads = num_heads
        self.norm_l = nn.LayerNorm(dim, eps=1e-5)
        self.norm_r = nn.LayerNorm(dim, eps=1e-5)
        self.attn_self = WindowAttention(dim, window_size, num_heads)
        self.attn_cross = WindowAttention(dim, window_size, num_heads)
        self.proj = nn.Linear(dim, dim)
        self.alpha = nn.Parameter(torch.tensor(float(alpha)))
        self.beta = nn.Parameter(torch.tensor(float(beta)))
        self.ffn = DualStreamFFN(dim, ffn_expansion)

    def attention_paths(self, left, right):
        """Windowed ``(self_l, cross_l, self_r, cross_r)`` before projection."""
        ws = self.window_size
        lw = window_partition(self.norm_l(left.permute(0, 2, 3, 1)), ws)
        rw = window_partition(self.norm_r(right.permute(0, 2, 3, 1)), ws)
        return (self.attn_self(lw, lw), self.attn_cross(lw, rw),
                self.attn_self(rw, rw), self.attn_cross(rw, lw))

    def forward(self, left, right):
        if left.shape != right.shape:
            raise ValueError(f"stream shapes differ {tuple(left.shape)} vs {tuple(right.shape)}")
        _, C, H, W = left.shape
        if C != self.dim:
            raise ConfigurationError(f"block built for {self.dim} channels, got {C}")
        ws = self.window_size
        s_l, c_l, s_r, c_r = self.attention_paths(left, right)
        al = window_reverse(self.proj(s_l + c_l), ws, H, W).permute(0, 3, 1, 2)
        ar = window_reverse(self.proj(s_r + c_r), ws, H, W).permute(0, 3, 1, 2)
        res_l = left + self.alpha * al
        res_r = right + self.alpha * ar
        fl, fr = self.ffn(res_l, res_r)
        return res_l + self.beta * fl, res_r + self.beta * fr

    def attention_flops(self, shape) -> int:
        """All four window attentions, the two sums and the two output projections."""
        C, H, W = shape
        N = H * W
        return 2 * (self.attn_self.flops(N) + self.attn_cross.flops(N) + C * N + _flops.linear(self.proj, N))

    def flops(self, shape) -> int:
        C, H, W = shape
        n = C * H * W
        total = 2 * _flops.LAYERNORM_PER_ELEMENT * n
        total += self.attention_flops(shape)
        total += 2 * (n + n)
        total += self.ffn.flops(shape)
        total += 2 * (n + n)
        return total


BLOCK_KINDS = ("mlp", "ytmt", "mugi", "daib", "dscrab")


def make_block(kind: str, dim: int, window_size: int = 4, num_heads: int = 2, ffn_expansion: int = 2) -> nn.Module:
    """Interaction block selected by the ``interaction.kind`` config key."""
    if kind == "mlp":
        return MLPBlock(dim)
    if kind == "ytmt":
        return YTMTBlock(dim)
    if kind == "mugi":
        return MuGIBlock(dim)
    if kind == "daib":
        return DAIB(dim, window_size, num_heads, ffn_expansion)
    if kind == "dscrab":
        return DSCRAB(dim, window_size, num_heads, ffn_expansion)
    raise ConfigurationError(f"unknown interaction kind '{kind}', expected one of {BLOCK_KINDS}")


def mlp_forward(left, right, block: MLPBlock):
    return block(left, right)


def ytmt_forward(left, right, block: YTMTBlock):
    return block(left, right)


def mugi_forward(left, right, block: MuGIBlock):
    return block(left, right)


def daib_forward(left, right, block: DAIB):
    return block(left, right)
