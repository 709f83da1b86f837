"""Training losses for layer separation.

All norms use the mean over elements (then over the batch), which keeps the
default weights independent of the image resolution.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError

VGG19_TAPS = (2, 7, 12, 21, 30)


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.01
    lambda4: float = 0.2

    def __post_init__(self):
        for k, v in self.as_tuple_items():
            if v < 0:
                raise ConfigurationError(f"loss weight {k} must be non-negative, got {v}")

    def as_tuple_items(self):
        return (("lambda1", self.lambda1), ("lambda2", self.lambda2),
                ("lambda3", self.lambda3), ("lambda4", self.lambda4))


class LossComponents(NamedTuple):
    pix: torch.Tensor
    grad: torch.Tensor
    per: torch.Tensor
    rec: torch.Tensor


def _same(*tensors):
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ValueError(f"loss inputs differ in shape: {tuple(shape)} vs {tuple(t.shape)}")


def pixel_loss(T_hat, T, R_hat, R):
    _same(T_hat, T, R_hat, R)
    return F.mse_loss(T_hat, T) + F.mse_loss(R_hat, R)


def image_gradients(x: torch.Tensor):
    """Forward differences along width and height; the last column/row is dropped."""
    return x[..., :, 1:] - x[..., :, :-1], x[..., 1:, :] - x[..., :-1, :]


def _gradient_l1(pred, target):
    px, py = image_gradients(pred)
    tx, ty = image_gradients(target)
    return F.l1_loss(px, tx) + F.l1_loss(py, ty)


def gradient_loss(T_hat, T, R_hat, R):
    _same(T_hat, T, R_hat, R)
    return _gradient_l1(T_hat, T) + _gradient_l1(R_hat, R)


def vgg19_layout(widths: Sequence[int] = (8, 16, 32, 64, 64), in_channels: int = 3) -> nn.Sequential:
    """A ``torchvision`` VGG-19 ``features``-shaped stack with custom widths.

    Layer indices line up with VGG-19's, so the default tap indices select the
    same positions as they would in the pretrained network.
    """
    blocks = (2, 2, 4, 4, 4)
    layers = []
    c = in_channels
    for i, (n, w) in enumerate(zip(blocks, widths)):
        for _ in range(n):
            layers += [nn.Conv2d(c, w, 3, padding=1), nn.ReLU(inplace=False)]
            c = w
        if i < len(blocks) - 1:
            layers.append(nn.MaxPool2d(2))
    return nn.Sequential(*layers)


class TapExtractor(nn.Module):
    """Frozen feature stack returning activations after the given layer indices."""

    def __init__(self, features: Optional[nn.Sequential] = None, taps: Sequence[int] = VGG19_TAPS, seed: int = 0):
        super().__init__()
        if features is None:
            gen_state = torch.random.get_rng_state()
            torch.manual_seed(seed)
            features = vgg19_layout()
            torch.random.set_rng_state(gen_state)
        if max(taps) >= len(features):
            raise ConfigurationError(f"tap {max(taps)} beyond a {len(features)}-layer extractor")
        self.features = features[: max(taps) + 1]
        self.taps = tuple(taps)
        for p in self.features.parameters():
            p.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):
        return super().train(False)

    def forward(self, x):
        out = []
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i in self.taps:
                out.append(x)
        return out


@dataclass
class PerceptualConfig:
    """Tap indices, per-tap weights and the feature extractor.

    ``extractor`` is any callable returning one feature tensor per tap. When
    left unset a frozen random-weight VGG-19-shaped stack is built on first use.
    """

    layers: tuple = VGG19_TAPS
    weights: Optional[tuple] = None
    extractor: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        if self.weights is None:
            self.weights = tuple(1.0 / len(self.layers) for _ in self.layers)
        if len(self.weights) != len(self.layers):
            raise ConfigurationError(f"{len(self.weights)} weights for {len(self.layers)} layers")
        if any(w < 0 for w in self.weights):
            raise ConfigurationError(f"perceptual weights must be non-negative: {self.weights}")

    def get_extractor(self):
        if self.extractor is None:
            self.extractor = TapExtractor(taps=self.layers)
        return self.extractor


def perceptual_loss(T_hat, T, cfg: Optional[PerceptualConfig] = None):
    _same(T_hat, T)
    cfg = cfg or PerceptualConfig()
    extractor = cfg.get_extractor()
    if isinstance(extractor, nn.Module):
        extractor.to(dtype=T_hat.dtype, device=T_hat.device)
    feats_hat = extractor(T_hat)
    with torch.no_grad():
        feats = extractor(T)
    if len(feats_hat) != len(cfg.weights):
        raise ConfigurationError(f"extractor returned {len(feats_hat)} taps, expected {len(cfg.weights)}")
    total = T_hat.new_zeros(())
    for w, a, b in zip(cfg.weights, feats_hat, feats):
        if w:
            total = total + w * F.l1_loss(a, b)
    return total


def reconstruction_loss(I, T_hat, R_hat, Phi_hat):
    _same(I, T_hat, R_hat, Phi_hat)
    return (I - (T_hat + R_hat) - Phi_hat).abs().mean()


def total_loss(components, w: LossWeights = LossWeights()):
    pix, grad, per, rec = components
    return w.lambda1 * pix + w.lambda2 * grad + w.lambda3 * per + w.lambda4 * rec


def compute_components(I, T, R, T_hat, R_hat, Phi_hat, perceptual: Optional[PerceptualConfig] = None) -> LossComponents:
    return LossComponents(
        pix=pixel_loss(T_hat, T, R_hat, R),
        grad=gradient_loss(T_hat, T, R_hat, R),
        per=perceptual_loss(T_hat, T, perceptual),
        rec=reconstruction_loss(I, T_hat, R_hat, Phi_hat),
    )
