"""Local linear correction prior: ``T_prior = s * I + b`` with per-pixel fields.

The correction network (LLCN) encodes the mixed image with a strided
convolutional encoder and decodes the bottleneck with two structurally
identical decoders, one for the gain ``s`` (sigmoid) and one for the bias
``b`` (tanh). Two ablation variants share the same encoder/decoder recipe:
:class:`DirectGenerationNet` (one decoder regresses ``T`` itself) and
:class:`GlobalLinearNet` (the two fields are averaged to per-channel scalars).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import torch
import torch.nn as nn

from . import _flops
from .errors import ConfigurationError


class CorrectionField(NamedTuple):
    s: torch.Tensor
    b: torch.Tensor


@dataclass
class LLCNConfig:
    """Encoder widths (one stride-2 stage each) and the training image size.

    The decoders mirror the encoder: one 2x upsampling stage per encoder stage,
    so the decoded fields come back at input resolution exactly.
    """

    widths: tuple = (16, 32, 64, 128)
    in_channels: int = 3
    image_size: int = 64

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if not self.widths or any(w < 1 for w in self.widths):
            raise ConfigurationError(f"encoder widths must be positive integers: {self.widths}")
        if self.image_size % self.multiple:
            raise ConfigurationError(
                f"image_size {self.image_size} is not divisible by the encoder stride {self.multiple}"
            )

    @property
    def decoder_stages(self) -> int:
        return len(self.widths)

    @property
    def multiple(self) -> int:
        return 2 ** len(self.widths)

    @property
    def bottleneck_size(self) -> int:
        return self.image_size // self.multiple

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


def apply_correction(I: torch.Tensor, f: CorrectionField) -> torch.Tensor:
    """``s * I + b`` elementwise. Deliberately unclamped."""
    if I.shape != f.s.shape or I.shape != f.b.shape:
        raise ValueError(f"apply_correction: shapes differ, I={tuple(I.shape)} s={tuple(f.s.shape)} b={tuple(f.b.shape)}")
    return f.s * I + f.b


def correction_loss(f: CorrectionField, I: torch.Tensor, T_gt: torch.Tensor) -> torch.Tensor:
    """Mean squared error of the corrected image, averaged over 3HW and then the batch."""
    if T_gt.shape != I.shape:
        raise ValueError(f"correction_loss: shapes differ, I={tuple(I.shape)} T={tuple(T_gt.shape)}")
    err = apply_correction(I, f) - T_gt
    return err.pow(2).flatten(1).mean(dim=1).mean()


class ConvEncoder(nn.Module):
    """Strided convolutional feature extractor.

    Any module with ``out_channels`` and ``stride`` attributes that maps
    ``[B, 3, H, W]`` to ``[B, out_channels, H/stride, W/stride]`` can stand in
    for it, e.g. a wrapper around a pretrained backbone.
    """

    def __init__(self, widths, in_channels: int = 3):
        super().__init__()
        layers = []
        c_in = in_channels
        for w in widths:
            layers += [
                nn.Conv2d(c_in, w, 3, stride=2, padding=1),
                nn.ReLU(inplace=False),
                nn.Conv2d(w, w, 3, padding=1),
                nn.ReLU(inplace=False),
            ]
            c_in = w
        self.body = nn.Sequential(*layers)
        self.out_channels = c_in
        self.stride = 2 ** len(widths)

    def forward(self, x):
        return self.body(x)


class Decoder(nn.Module):
    """Cascade of (transposed conv 2x, conv 3x3, ReLU) stages and a 3x3 output conv.

    The output conv starts at zero so that the activated field is constant at
    initialisation.
    """

    def __init__(self, in_channels: int, widths, out_channels: int = 3):
        super().__init__()
        stages = []
        c_in = in_channels
        for w in widths:
            stages += [
                nn.ConvTranspose2d(c_in, w, 2, stride=2),
                nn.Conv2d(w, w, 3, padding=1),
                nn.ReLU(inplace=False),
            ]
            c_in = w
        self.body = nn.Sequential(*stages)
        self.head = nn.Conv2d(c_in, out_channels, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x):
        return self.head(self.body(x))


class _EncoderDecoders(nn.Module):
    n_decoders = 2

    def __init__(self, cfg: Optional[LLCNConfig] = None, encoder: Optional[nn.Module] = None):
        super().__init__()
        self.cfg = cfg or LLCNConfig()
        self.encoder = encoder if encoder is not None else ConvEncoder(self.cfg.widths, self.cfg.in_channels)
        n_up = self.cfg.decoder_stages
        dec_widths = tuple(reversed(self.cfg.widths))[1:] + (self.cfg.widths[0],)
        if len(dec_widths) != n_up:
            raise ConfigurationError("decoder stage count must match encoder stride")
        self.decoders = nn.ModuleList(
            Decoder(self.encoder.out_channels, dec_widths, self.cfg.in_channels) for _ in range(self.n_decoders)
        )

    @property
    def multiple(self) -> int:
        return int(self.encoder.stride)

    def _trunk_flops(self, shape):
        """FLOPs of the encoder plus every decoder, and the decoded shape."""
        total, feat = _flops.layer(self.encoder.body if isinstance(self.encoder, ConvEncoder) else self.encoder, shape)
        for dec in self.decoders:
            f, out = _flops.layer(dec.body, feat)
            g, out = _flops.conv2d(dec.head, out)
            total += f + g
        return total, out

    def _features(self, I: torch.Tensor) -> torch.Tensor:
        if I.dim() != 4:
            raise ValueError(f"expected a [B, C, H, W] image, got shape {tuple(I.shape)}")
        h, w = I.shape[-2:]
        if h % self.multiple or w % self.multiple:
            raise ValueError(f"spatial size {h}x{w} is not divisible by the encoder stride {self.multiple}; pad first")
        return self.encoder(I)


class LLCN(_EncoderDecoders):
    """Local linear correction network."""

    def predict_fields(self, I: torch.Tensor) -> CorrectionField:
        feats = self._features(I)
        s = torch.sigmoid(self.decoders[0](feats))
        b = torch.tanh(self.decoders[1](feats))
        return CorrectionField(s, b)

    def forward(self, I: torch.Tensor) -> torch.Tensor:
        return apply_correction(I, self.predict_fields(I))

    def flops(self, shape) -> int:
        trunk, out = self._trunk_flops(shape)
        n = out[0] * out[1] * out[2]
        return trunk + 2 * n + 2 * n  # sigmoid + tanh, then s * I + b


def predict_fields(I: torch.Tensor, model: LLCN) -> CorrectionField:
    return model.predict_fields(I)


def llcn_forward(I: torch.Tensor, model: LLCN) -> torch.Tensor:
    return model(I)


class DirectGenerationNet(_EncoderDecoders):
    """Ablation variant: one decoder regresses the transmission directly (sigmoid output)."""

    n_decoders = 1

    def forward(self, I: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.decoders[0](self._features(I)))

    def flops(self, shape) -> int:
        trunk, out = self._trunk_flops(shape)
        return trunk + out[0] * out[1] * out[2]


class GlobalLinearNet(LLCN):
    """Ablation variant ``T = alpha * I + beta`` with per-channel global scalars.

    ``alpha`` and ``beta`` are the spatial means of the sigmoid/tanh fields, so
    they are constant over the image by construction.
    """

    def coefficients(self, I: torch.Tensor):
        f = self.predict_fields(I)
        return f.s.mean(dim=(-2, -1), keepdim=True), f.b.mean(dim=(-2, -1), keepdim=True)

    def forward(self, I: torch.Tensor, alpha: Optional[torch.Tensor] = None, beta: Optional[torch.Tensor] = None):
        if alpha is None or beta is None:
            a, b = self.coefficients(I)
            alpha = a if alpha is None else alpha
            beta = b if beta is None else beta
        return alpha * I + beta

    def flops(self, shape) -> int:
        trunk, out = self._trunk_flops(shape)
        n = out[0] * out[1] * out[2]
        return trunk + 2 * n + 2 * n + 2 * n  # activations, spatial means, alpha * I + beta


def direct_generation_baseline(I: torch.Tensor, model: DirectGenerationNet) -> torch.Tensor:
    return model(I)


def global_linear_baseline(I: torch.Tensor, model: GlobalLinearNet) -> torch.Tensor:
    return model(I)


MODELING_METHODS = {
    "local_linear": LLCN,
    "global_linear": GlobalLinearNet,
    "direct": DirectGenerationNet,
}
