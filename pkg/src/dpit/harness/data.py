"""Training pools, validation split and batching for the harness.

Pools come from pair directories (``blended/`` + ``transmission/``) when the
config names them, otherwise from procedural sources. Every image is fitted
to the stage resolution: the shorter side is resized to ``image_size`` and the
centre square is cropped. No other augmentation is applied.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import ConfigurationError
from ..imageio import is_pair_dir, load_pairs
from ..synth import DatasetMix, ImagePair, make_synthetic_pool, sample_epoch

POOL_NAMES = ("synthetic", "real", "nature")


def fit_image(x: torch.Tensor, size: int) -> torch.Tensor:
    """Resize so the shorter side is ``size`` (bilinear, antialiased), then centre-crop to ``size x size``."""
    H, W = x.shape[-2:]
    if (H, W) != (size, size):
        scale = size / min(H, W)
        nh, nw = max(size, round(H * scale)), max(size, round(W * scale))
        if (nh, nw) != (H, W):
            x = F.interpolate(x[None], size=(nh, nw), mode="bilinear", align_corners=False, antialias=True)[0]
        top, left = (nh - size) // 2, (nw - size) // 2
        x = x[..., top:top + size, left:left + size]
    return x.contiguous()


def fit_pair(p: ImagePair, size: int) -> ImagePair:
    return ImagePair(fit_image(p.transmission, size), fit_image(p.reflection, size),
                     fit_image(p.mixed, size), p.coefficients, p.source)


def _resolve_dir(data: dict, name: str):
    """Explicit ``data.<name>`` wins; otherwise ``data.root/<name>`` if present."""
    if data.get(name):
        d = Path(data[name])
        if not d.is_dir() or not is_pair_dir(d):
            raise ConfigurationError(f"data.{name} = {d} is not a pair directory (needs blended/ and transmission/)")
        return d
    root = data.get("root")
    if root:
        d = Path(root) / name
        if d.is_dir() and is_pair_dir(d):
            return d
    return None


def build_pools(data: dict, image_size: int, seed: int):
    """``(pools, mix_ratios)`` for the three training sources.

    Empty pools get ratio 0 and the remaining ratios are renormalised, so a
    purely synthetic setup samples only from the synthetic pool.
    """
    root = data.get("root")
    if root and not Path(root).is_dir():
        raise ConfigurationError(f"data.root = {root} does not exist")
    if root and is_pair_dir(root):
        pools = [[fit_pair(p, image_size) for p in load_pairs(root)], [], []]
    else:
        pools = []
        for name in POOL_NAMES:
            d = _resolve_dir(data, name)
            pools.append([fit_pair(p, image_size) for p in load_pairs(d)] if d is not None else [])
        if not pools[0]:
            rng = np.random.default_rng([seed, 0])
            pools[0] = make_synthetic_pool(int(data["synthetic_count"]), image_size, rng)
    ratios = [r if pool else 0.0 for r, pool in zip(data["mix"], pools)]
    if sum(ratios) <= 0:
        raise ConfigurationError("no training pool has both data and a positive sampling ratio")
    ratios = tuple(r / sum(ratios) for r in ratios)
    return pools, ratios


def build_val(data: dict, image_size: int, seed: int) -> list:
    """Validation pairs as ``(dataset, name, pair)``; a held-out procedural slice by default."""
    d = _resolve_dir(data, "val")
    if d is not None:
        out = []
        subdirs = [s for s in sorted(d.iterdir()) if s.is_dir() and is_pair_dir(s)]
        for sub in subdirs or [d]:
            for i, p in enumerate(load_pairs(sub)):
                out.append((sub.name, f"{i:04d}", fit_pair(p, image_size)))
        if not out:
            raise ConfigurationError(f"validation directory {d} holds no pairs")
        return out
    rng = np.random.default_rng([seed, 1])
    pool = make_synthetic_pool(int(data["val_count"]), image_size, rng)
    return [("val", f"{i:04d}", p) for i, p in enumerate(pool)]


class EpochSampler:
    """Per-epoch sample order.

    With ``samples_per_epoch`` set, samples are drawn with replacement using
    the mix ratios; with it ``None`` every training pair is visited once per
    epoch in shuffled order.
    """

    def __init__(self, pools, ratios, samples_per_epoch, seed: int):
        self.pools = pools
        self.ratios = ratios
        self.samples_per_epoch = samples_per_epoch
        self.rng = np.random.default_rng([seed, 2])
        self.all_pairs = [p for pool in pools for p in pool]

    def epoch(self) -> list:
        if self.samples_per_epoch is None:
            order = self.rng.permutation(len(self.all_pairs))
            return [self.all_pairs[i] for i in order]
        return sample_epoch(DatasetMix(self.ratios, int(self.samples_per_epoch)), self.pools, self.rng)


def batches(pairs, batch_size: int):
    """Stack consecutive pairs into ``(I, T, R)`` batches; the last batch may be short."""
    for i in range(0, len(pairs), batch_size):
        chunk = pairs[i:i + batch_size]
        yield (torch.stack([p.mixed for p in chunk]),
               torch.stack([p.transmission for p in chunk]),
               torch.stack([p.reflection for p in chunk]))
