"""Synthetic reflection data: the blending model, pair generation and epoch sampling.

Images are float tensors in [0, 1] shaped ``[3, H, W]`` (single image) or
``[B, 3, H, W]`` (batch). Random draws always go through an explicit
:class:`numpy.random.Generator` so that every routine here is deterministic
under a fixed seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from scipy import ndimage

from .errors import ConfigurationError

GAMMA1_RANGE = (0.8, 1.0)
GAMMA2_RANGE = (0.4, 1.0)


@dataclass(frozen=True)
class BlendCoefficients:
    """Transmission weight ``gamma1`` and reflection weight ``gamma2``."""

    gamma1: float
    gamma2: float

    def __post_init__(self):
        for name in ("gamma1", "gamma2"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "BlendCoefficients":
        g1 = rng.uniform(*GAMMA1_RANGE)
        g2 = rng.uniform(*GAMMA2_RANGE)
        return cls(float(g1), float(g2))


@dataclass
class ImagePair:
    """Ground-truth transmission, ground-truth reflection and the observed mixture."""

    transmission: torch.Tensor
    reflection: torch.Tensor
    mixed: torch.Tensor
    coefficients: Optional[BlendCoefficients] = None
    source: str = "synthetic"

    def __post_init__(self):
        shapes = {tuple(self.transmission.shape), tuple(self.reflection.shape), tuple(self.mixed.shape)}
        if len(shapes) != 1:
            raise ValueError(f"ImagePair tensors must share one shape, got {sorted(shapes)}")


@dataclass(frozen=True)
class DatasetMix:
    """Per-epoch sampling proportions over the (synthetic, real, nature) pools."""

    ratios: tuple = (0.6, 0.2, 0.2)
    samples_per_epoch: int = 4000
    names: tuple = field(default=("synthetic", "real", "nature"), repr=False)

    def __post_init__(self):
        if len(self.ratios) != len(self.names):
            raise ConfigurationError(f"expected {len(self.names)} ratios, got {len(self.ratios)}")
        if any(r < 0 for r in self.ratios):
            raise ConfigurationError(f"ratios must be non-negative: {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ConfigurationError(f"ratios must sum to 1, got {sum(self.ratios)!r}")
        if int(self.samples_per_epoch) != self.samples_per_epoch or self.samples_per_epoch < 1:
            raise ConfigurationError(f"samples_per_epoch must be a positive integer, got {self.samples_per_epoch}")


def _check_same_shape(a, b, what: str):
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def blend(T, R, c: BlendCoefficients):
    """Screen-like blend ``g1*T + g2*R - g1*g2*T*R``.

    Stays inside [0, 1] whenever ``T`` and ``R`` do, because it equals
    ``g1*T + g2*R*(1 - g1*T)``. Works on numpy arrays and torch tensors alike.
    """
    _check_same_shape(T, R, "blend")
    g1, g2 = c.gamma1, c.gamma2
    return g1 * T + g2 * R - (g1 * g2) * T * R


def derive_reflection_gt(I, T):
    """Reflection ground truth as the absolute residual ``|I - T|``."""
    _check_same_shape(I, T, "derive_reflection_gt")
    return abs(I - T)


def generate_synthetic_pair(t_src: torch.Tensor, r_src: torch.Tensor, rng: np.random.Generator) -> ImagePair:
    c = BlendCoefficients.sample(rng)
    mixed = blend(t_src, r_src, c)
    return ImagePair(
        transmission=t_src,
        reflection=derive_reflection_gt(mixed, t_src),
        mixed=mixed,
        coefficients=c,
    )


def sample_epoch(mix: DatasetMix, pools: Sequence[Sequence[ImagePair]], rng: np.random.Generator) -> list:
    """Draw ``mix.samples_per_epoch`` pairs with replacement.

    The source pool of every sample is drawn from ``mix.ratios``; within a pool
    the pair index is uniform.
    """
    if len(pools) != len(mix.ratios):
        raise ConfigurationError(f"expected {len(mix.ratios)} pools, got {len(pools)}")
    for name, ratio, pool in zip(mix.names, mix.ratios, pools):
        if ratio > 0 and len(pool) == 0:
            raise ConfigurationError(f"pool '{name}' is empty but has sampling ratio {ratio}")

    n = int(mix.samples_per_epoch)
    sources = rng.choice(len(pools), size=n, p=np.asarray(mix.ratios, dtype=np.float64))
    out = []
    for s in sources:
        pool = pools[s]
        out.append(pool[int(rng.integers(len(pool)))])
    return out


# ---------------------------------------------------------------------------
# procedural sources (stand-in for natural photographs)
# ---------------------------------------------------------------------------

def procedural_image(rng: np.random.Generator, size: int = 64, n_shapes: int = 6, blur: float = 0.0) -> torch.Tensor:
    """Random smooth colour gradient with a few filled rectangles and ellipses.

    Returns a float32 tensor ``[3, size, size]`` in [0, 1].
    """
    yy, xx = np.meshgrid(np.linspace(0.0, 1.0, size), np.linspace(0.0, 1.0, size), indexing="ij")
    c0, c1 = rng.uniform(0.0, 1.0, size=(2, 3))
    angle = rng.uniform(0.0, 2 * np.pi)
    ramp = np.cos(angle) * xx + np.sin(angle) * yy
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-8)
    img = c0[:, None, None] * (1 - ramp) + c1[:, None, None] * ramp

    for _ in range(n_shapes):
        color = rng.uniform(0.0, 1.0, size=3)
        cy, cx = rng.uniform(0.0, 1.0, size=2)
        hy, hx = rng.uniform(0.05, 0.3, size=2)
        if rng.uniform() < 0.5:
            mask = (np.abs(yy - cy) < hy) & (np.abs(xx - cx) < hx)
        else:
            mask = ((yy - cy) / hy) ** 2 + ((xx - cx) / hx) ** 2 < 1.0
        img[:, mask] = color[:, None]

    if blur > 0:
        img = ndimage.gaussian_filter(img, sigma=(0, blur, blur), mode="reflect")
    return torch.from_numpy(np.clip(img, 0.0, 1.0).astype(np.float32))


def make_synthetic_pool(count: int, size: int, rng: np.random.Generator) -> list:
    """``count`` synthetic pairs from procedural sources.

    Reflection sources are blurred by a random Gaussian (sigma in [1, 3]), which
    mimics out-of-focus reflections and makes their strength vary spatially.
    """
    pool = []
    for _ in range(count):
        t = procedural_image(rng, size)
        r = procedural_image(rng, size, blur=float(rng.uniform(1.0, 3.0)))
        pool.append(generate_synthetic_pair(t, r, rng))
    return pool
