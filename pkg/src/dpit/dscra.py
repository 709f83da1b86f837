"""Dual-stream channel reorganization attention block (DSCRAB).

Both streams are layer-normalised, their channel halves are swapped into a
*generation* stream (first halves of left and right) and an *exchange* stream
(second halves), and two window attentions run with queries from the
generation stream: one intra-stream (keys/values from the generation stream)
and one cross-stream (keys/values from the exchange stream). Their sum goes
through a shared output projection, is folded back to the feature map and
each half is duplicated to rebuild a full-width stream. Two scaled residuals
(``alpha`` on the attention path, ``beta`` on the feed-forward path) close the
block.

Shapes: streams enter and leave as ``[B, C, H, W]``; the attention internals
work on channels-last ``[B, H, W, C]`` maps and ``[B * nW, M, C]`` windows.
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import _flops
from .errors import ConfigurationError


def window_partition(x: torch.Tensor, ws: int) -> torch.Tensor:
    """Split ``[B, H, W, C]`` into non-overlapping ``ws x ws`` windows ``[B * nW, ws*ws, C]``.

    Windows are ordered row-major over the window grid and tokens row-major
    inside each window.
    """
    B, H, W, C = x.shape
    if H % ws or W % ws:
        raise ValueError(f"window_partition: {H}x{W} is not divisible by window size {ws}")
    x = x.view(B, H // ws, ws, W // ws, ws, C)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, ws * ws, C)


def window_reverse(windows: torch.Tensor, ws: int, H: int, W: int) -> torch.Tensor:
    """Inverse of :func:`window_partition`."""
    n, M, C = windows.shape
    if M != ws * ws or H % ws or W % ws or n % ((H // ws) * (W // ws)):
        raise ValueError(
            f"window_reverse: {n} windows of {M} tokens do not tile a {H}x{W} map with window size {ws}"
        )
    B = n // ((H // ws) * (W // ws))
    x = windows.view(B, H // ws, W // ws, ws, ws, C)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(B, H, W, C)


def _halves(x: torch.Tensor, what: str):
    C = x.shape[-1]
    if C % 2:
        raise ValueError(f"{what}: channel count must be even, got {C}")
    return x[..., : C // 2], x[..., C // 2:]


def channel_reorganize(left: torch.Tensor, right: torch.Tensor):
    """Channels-last pair -> (generation, exchange) streams."""
    if left.shape != right.shape:
        raise ValueError(f"channel_reorganize: stream shapes differ {tuple(left.shape)} vs {tuple(right.shape)}")
    l1, l2 = _halves(left, "channel_reorganize")
    r1, r2 = _halves(right, "channel_reorganize")
    return torch.cat([l1, r1], dim=-1), torch.cat([l2, r2], dim=-1)


def redistribute(combined: torch.Tensor):
    """Split channels-last ``combined`` in halves and duplicate each to full width."""
    out_l, out_r = _halves(combined, "redistribute")
    return torch.cat([out_l, out_l], dim=-1), torch.cat([out_r, out_r], dim=-1)


def relative_position_index(ws: int) -> torch.Tensor:
    """``[M, M]`` index into a ``(2ws-1)^2`` bias table, Swin layout."""
    coords = torch.stack(torch.meshgrid(torch.arange(ws), torch.arange(ws), indexing="ij")).flatten(1)
    rel = (coords[:, :, None] - coords[:, None, :]).permute(1, 2, 0)
    rel = rel + (ws - 1)
    return rel[..., 0] * (2 * ws - 1) + rel[..., 1]


class WindowAttention(nn.Module):
    """Multi-head window attention with a learnable relative position bias.

    Queries come from ``q_src``; keys and values from ``kv_src`` (the same
    tensor for self-attention). No output projection: callers combine several
    attention paths before projecting. ``calls`` counts forward evaluations.
    """

    def __init__(self, dim: int, window_size: int, num_heads: int):
        super().__init__()
        if dim % num_heads:
            raise ConfigurationError(f"{num_heads} heads do not divide {dim} channels")
        self.dim = dim
        self.window_size = window_size
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = self.head_dim ** -0.5
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.relative_position_bias_table = nn.Parameter(torch.zeros((2 * window_size - 1) ** 2, num_heads))
        self.register_buffer("relative_position_index", relative_position_index(window_size), persistent=False)
        self.calls = 0

    def position_bias(self) -> torch.Tensor:
        M = self.window_size ** 2
        bias = self.relative_position_bias_table[self.relative_position_index.reshape(-1)]
        return bias.view(M, M, self.num_heads).permute(2, 0, 1)

    def forward(self, q_src: torch.Tensor, kv_src: torch.Tensor, return_attn: bool = False):
        if q_src.shape != kv_src.shape:
            raise ValueError(f"query and key/value windows differ: {tuple(q_src.shape)} vs {tuple(kv_src.shape)}")
        n, M, C = q_src.shape
        if C != self.dim:
            raise ConfigurationError(f"attention built for {self.dim} channels, got {C}")
        if M != self.window_size ** 2:
            raise ConfigurationError(f"attention built for {self.window_size ** 2} tokens per window, got {M}")
        self.calls += 1
        h, d = self.num_heads, self.head_dim
        q = self.q(q_src).view(n, M, h, d).transpose(1, 2)
        k = self.k(kv_src).view(n, M, h, d).transpose(1, 2)
        v = self.v(kv_src).view(n, M, h, d).transpose(1, 2)
        logits = (q @ k.transpose(-2, -1)) * self.scale + self.position_bias().unsqueeze(0)
        attn = logits.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(n, M, C)
        return (out, attn) if return_attn else out

    def flops(self, tokens: int) -> int:
        """FLOPs for ``tokens`` query tokens (any number of whole windows)."""
        M, C, h = self.window_size ** 2, self.dim, self.num_heads
        proj = sum(_flops.linear(lin, tokens) for lin in (self.q, self.k, self.v))
        logits = tokens * M * h
        core = 2 * tokens * M * C                       # Q K^T
        core += logits * (2 + _flops.SOFTMAX_PER_LOGIT)  # scale, bias add, softmax
        core += 2 * tokens * M * C                      # attn @ V
        return proj + core


def windowed_attention(q_src, kv_src, attention: WindowAttention, return_attn: bool = False):
    return attention(q_src, kv_src, return_attn=return_attn)


class DualStreamFFN(nn.Module):
    """Feed-forward stage shared by both streams.

    1. cross-stream gating: ``l * sigmoid(g(r))`` and ``r * sigmoid(g(l))`` with a 1x1 conv ``g``
    2. squeeze-style channel attention: ``x * sigmoid(MLP(mean_hw(x)))``
    3. pointwise expansion, GELU, pointwise contraction
    """

    def __init__(self, dim: int, expansion: int = 2, ca_reduction: int = 4):
        super().__init__()
        hidden = max(dim // ca_reduction, 1)
        self.dim = dim
        self.gate = nn.Conv2d(dim, dim, 1)
        self.ca = nn.Sequential(nn.Conv2d(dim, hidden, 1), nn.GELU(), nn.Conv2d(hidden, dim, 1))
        self.expand = nn.Conv2d(dim, dim * expansion, 1)
        self.act = nn.GELU()
        self.contract = nn.Conv2d(dim * expansion, dim, 1)

    def gated(self, left, right):
        return left * torch.sigmoid(self.gate(right)), right * torch.sigmoid(self.gate(left))

    def _stream(self, x):
        x = x * torch.sigmoid(self.ca(x.mean(dim=(-2, -1), keepdim=True)))
        return self.contract(self.act(self.expand(x)))

    def forward(self, left, right):
        gl, gr = self.gated(left, right)
        return self._stream(gl), self._stream(gr)

    def flops(self, shape) -> int:
        C, H, W = shape
        n = C * H * W
        per_stream = _flops.conv2d(self.gate, shape)[0] + n + n  # gate conv, sigmoid, product
        per_stream += n                                             # spatial mean
        per_stream += _flops.layer(self.ca, (C, 1, 1))[0] + C + n    # squeeze MLP, sigmoid, rescale
        f, hidden_shape = _flops.conv2d(self.expand, shape)
        per_stream += f + hidden_shape[0] * H * W
        per_stream += _flops.conv2d(self.contract, hidden_shape)[0]
        return 2 * per_stream


def ffn(left, right, module: DualStreamFFN):
    return module(left, right)


class DSCRAB(nn.Module):
    """Dual-stream channel reorganization attention block.

    ``forward(left, right)`` takes and returns ``[B, C, H, W]`` streams. ``C``
    must be even, divisible by ``num_heads``, and ``H``/``W`` divisible by
    ``window_size``.
    """

    attention_evaluations = 2

    def __init__(self, dim: int, window_size: int = 4, num_heads: int = 2, ffn_expansion: int = 2,
                 alpha: float = 0.1, beta: float = 0.1):
        super().__init__()
        if dim % 2:
            raise ConfigurationError(f"DSCRAB needs an even channel count, got {dim}")
        self.dim = dim
        self.window_size = window_size
        self.num_heads = num_heads
        self.norm_l = nn.LayerNorm(dim, eps=1e-5)
        self.norm_r = nn.LayerNorm(dim, eps=1e-5)
        self.attn_intra = WindowAttention(dim, window_size, num_heads)
        self.attn_cross = WindowAttention(dim, window_size, num_heads)
        self.proj = nn.Linear(dim, dim)
        self.alpha = nn.Parameter(torch.tensor(float(alpha)))
        self.beta = nn.Parameter(torch.tensor(float(beta)))
        self.ffn = DualStreamFFN(dim, ffn_expansion)

    def _check(self, left, right):
        if left.shape != right.shape:
            raise ValueError(f"stream shapes differ {tuple(left.shape)} vs {tuple(right.shape)}")
        _, C, H, W = left.shape
        if C != self.dim:
            raise ConfigurationError(f"block built for {self.dim} channels, got {C}")
        if H % self.window_size or W % self.window_size:
            raise ValueError(f"{H}x{W} is not divisible by window size {self.window_size}")

    def attention(self, left, right):
        """Attention path only: returns the redistributed channels-last pair."""
        _, _, H, W = left.shape
        ws = self.window_size
        nl = self.norm_l(left.permute(0, 2, 3, 1))
        nr = self.norm_r(right.permute(0, 2, 3, 1))
        gen, exch = channel_reorganize(nl, nr)
        gen_w = window_partition(gen, ws)
        exch_w = window_partition(exch, ws)
        combined = self.attn_intra(gen_w, gen_w) + self.attn_cross(gen_w, exch_w)
        combined = window_reverse(self.proj(combined), ws, H, W)
        return redistribute(combined)

    def forward(self, left, right):
        self._check(left, right)
        al, ar = self.attention(left, right)
        res_l = left + self.alpha * al.permute(0, 3, 1, 2)
        res_r = right + self.alpha * ar.permute(0, 3, 1, 2)
        fl, fr = self.ffn(res_l, res_r)
        return res_l + self.beta * fl, res_r + self.beta * fr

    def attention_flops(self, shape) -> int:
        """Both window attentions, their sum and the output projection."""
        C, H, W = shape
        N = H * W
        return self.attn_intra.flops(N) + self.attn_cross.flops(N) + C * N + _flops.linear(self.proj, N)

    def flops(self, shape) -> int:
        C, H, W = shape
        n = C * H * W
        total = 2 * _flops.LAYERNORM_PER_ELEMENT * n
        total += self.attention_flops(shape)
        total += 2 * (n + n)                # alpha scaling and residual, both streams
        total += self.ffn.flops(shape)
        total += 2 * (n + n)                # beta scaling and residual, both streams
        return total


def dscrab_forward(left, right, block: DSCRAB):
    return block(left, right)
