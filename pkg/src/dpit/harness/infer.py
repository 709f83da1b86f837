"""Checkpoint inference: per-image PNGs for the transmission, reflection, residue and prior."""
from __future__ import annotations

from pathlib import Path
from typing import Callable

import torch

from ..dscrt import DPIT, DSCRT, pad_to_multiple
from ..errors import ConfigurationError, DataError
from ..imageio import BLENDED, is_pair_dir, load_png, save_png
from .checkpoint import Checkpoint

SUFFIXES = ("T", "R", "Phi", "Tprior")


def predictor(ckpt: Checkpoint) -> Callable:
    """``I [B, 3, H, W] -> (SeparationOutput or None, T_prior)`` for any checkpoint kind."""
    model = ckpt.build()

    @torch.no_grad()
    def run(I):
        if isinstance(model, DPIT):
            return model(I)
        if isinstance(model, DSCRT):
            return model(I, I), I
        x, (H, W) = pad_to_multiple(I, model.multiple)
        return None, model(x)[..., :H, :W]

    return run


def transmission_estimator(ckpt: Checkpoint) -> Callable:
    """``I -> T_hat``; the prior itself for LLCN-only checkpoints."""
    run = predictor(ckpt)

    def estimate(I):
        out, t_prior = run(I)
        return t_prior if out is None else out.T_hat

    return estimate


def input_images(input_dir) -> list:
    d = Path(input_dir)
    if not d.is_dir():
        raise DataError(f"input directory {d} does not exist")
    if is_pair_dir(d):
        d = d / BLENDED
    files = sorted(d.glob("*.png"))
    if not files:
        raise DataError(f"no PNG images in {d}")
    return files


def infer(ckpt_path, input_dir, output_dir) -> list:
    """Writes ``<name>_T.png``, ``_R.png``, ``_Phi.png`` and ``_Tprior.png`` per input; returns the paths."""
    ckpt = Checkpoint.load(ckpt_path)
    if ckpt.model not in ("dscrt", "dpit"):
        raise ConfigurationError(f"inference needs a separation-network checkpoint, got '{ckpt.model}'")
    run = predictor(ckpt)
    out_dir = Path(output_dir)
    written = []
    for f in input_images(input_dir):
        I = load_png(f).unsqueeze(0)
        out, t_prior = run(I)
        for suffix, img in zip(SUFFIXES, (out.T_hat, out.R_hat, out.Phi_hat, t_prior)):
            path = out_dir / f"{f.stem}_{suffix}.png"
            save_png(img[0], path)
            written.append(path)
    return written
