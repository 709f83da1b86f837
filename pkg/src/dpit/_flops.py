"""Closed-form FLOP formulas for standard layers.

Convention, used everywhere in the package:

* one multiply-accumulate = 2 FLOPs; a bias add = 1 FLOP per output element
* layer norm = 7 FLOPs per element (mean, centre, square, variance sum,
  normalise, affine scale, affine shift)
* softmax = 3 FLOPs per logit (exp, sum, divide)
* every activation (ReLU, GELU, sigmoid, tanh) = 1 FLOP per element
* elementwise add/multiply = 1 FLOP per element; a spatial mean = 1 per input element
* reshapes, pixel shuffles, chunking, concatenation and padding are free
"""
from __future__ import annotations

import torch.nn as nn

CONVENTION = (
    "MAC=2 FLOPs; bias=1/output; layernorm=7/element; softmax=3/logit; "
    "activation=1/element; elementwise=1/element; reshapes free"
)

LAYERNORM_PER_ELEMENT = 7
SOFTMAX_PER_LOGIT = 3
ACTIVATIONS = (nn.ReLU, nn.GELU, nn.Sigmoid, nn.Tanh, nn.SiLU, nn.LeakyReLU)


def conv2d(conv: nn.Conv2d, shape):
    """FLOPs and output shape of ``conv`` applied to a ``(C, H, W)`` input."""
    c, h, w = shape
    kh, kw = conv.kernel_size
    sh, sw = conv.stride
    ph, pw = conv.padding
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    out = conv.out_channels * ho * wo
    flops = 2 * out * (conv.in_channels // conv.groups) * kh * kw
    if conv.bias is not None:
        flops += out
    return flops, (conv.out_channels, ho, wo)


def conv_transpose2d(conv: nn.ConvTranspose2d, shape):
    c, h, w = shape
    kh, kw = conv.kernel_size
    sh, sw = conv.stride
    ph, pw = conv.padding
    ho = (h - 1) * sh - 2 * ph + kh
    wo = (w - 1) * sw - 2 * pw + kw
    flops = 2 * h * w * conv.in_channels * (conv.out_channels // conv.groups) * kh * kw
    if conv.bias is not None:
        flops += conv.out_channels * ho * wo
    return flops, (conv.out_channels, ho, wo)


def linear(layer: nn.Linear, tokens: int) -> int:
    flops = 2 * tokens * layer.in_features * layer.out_features
    if layer.bias is not None:
        flops += tokens * layer.out_features
    return flops


def layer(module: nn.Module, shape):
    """FLOPs of a standard leaf layer (or a Sequential of them) on a ``(C, H, W)`` input."""
    if isinstance(module, nn.Sequential):
        total = 0
        for m in module:
            f, shape = layer(m, shape)
            total += f
        return total, shape
    if isinstance(module, nn.Conv2d):
        return conv2d(module, shape)
    if isinstance(module, nn.ConvTranspose2d):
        return conv_transpose2d(module, shape)
    if isinstance(module, ACTIVATIONS):
        c, h, w = shape
        return c * h * w, shape
    if isinstance(module, nn.PixelShuffle):
        c, h, w = shape
        r = module.upscale_factor
        return 0, (c // (r * r), h * r, w * r)
    if isinstance(module, nn.Identity):
        return 0, shape
    if hasattr(module, "flops"):
        return module.flops(shape), shape
    raise TypeError(f"no FLOP formula for {type(module).__name__}")
