"""8-bit PNG input/output and the paired dataset directory layout.

A dataset directory holds ``blended/*.png`` and ``transmission/*.png`` with
matching file names (``reflection/*.png`` is optional). Images are loaded as
float32 ``[3, H, W]`` tensors in [0, 1].
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import DataError

BLENDED = "blended"
TRANSMISSION = "transmission"
REFLECTION = "reflection"


def load_png(path) -> torch.Tensor:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def to_uint8(img) -> np.ndarray:
    """``[3, H, W]`` float in [0, 1] -> ``[H, W, 3]`` uint8, clamped, round-half-even."""
    if isinstance(img, torch.Tensor):
        img = img.detach().cpu().double().numpy()
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.rint(img * 255.0).astype(np.uint8).transpose(1, 2, 0)


def save_png(img, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img), mode="RGB").save(path, optimize=False)


def is_pair_dir(root) -> bool:
    root = Path(root)
    return (root / BLENDED).is_dir() and (root / TRANSMISSION).is_dir()


def list_pairs(root) -> list:
    """Sorted ``(name, blended_path, transmission_path)`` for filename-matched pairs."""
    root = Path(root)
    if not is_pair_dir(root):
        raise DataError(f"{root} lacks '{BLENDED}/' and '{TRANSMISSION}/' subdirectories")
    out = []
    for b in sorted((root / BLENDED).glob("*.png")):
        t = root / TRANSMISSION / b.name
        if t.exists():
            out.append((b.stem, b, t))
    return out


def dataset_dirs(root) -> list:
    """The pair directories under ``root``: ``root`` itself, or each of its subdirectories."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    if is_pair_dir(root):
        return [root]
    return [d for d in sorted(root.iterdir()) if d.is_dir() and is_pair_dir(d)]


def load_pairs(root) -> list:
    """All pairs in ``root`` as :class:`~dpit.synth.ImagePair` objects with R = |I - T|."""
    from .synth import ImagePair, derive_reflection_gt

    pairs = []
    for name, b, t in list_pairs(root):
        I, T = load_png(b), load_png(t)
        if I.shape != T.shape:
            raise DataError(f"pair {name}: blended {tuple(I.shape)} vs transmission {tuple(T.shape)}")
        pairs.append(ImagePair(transmission=T, reflection=derive_reflection_gt(I, T), mixed=I, source=str(root)))
    return pairs
