"""PSNR / SSIM and dataset-level evaluation reports.

Metrics are computed in RGB on [0, 1] floats; model outputs are clamped to
[0, 1] before scoring.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DataError
from .imageio import dataset_dirs, list_pairs, load_png


def _as_tensor(x) -> torch.Tensor:
    t = x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x))
    return t.detach().to(torch.float64)


def psnr(x, y, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` when the images are identical."""
    x, y = _as_tensor(x), _as_tensor(y)
    if x.shape != y.shape:
        raise ValueError(f"psnr: shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    mse = float(((x - y) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2 * sigma * sigma))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(x, y, window: int = 11, K1: float = 0.01, K2: float = 0.03, peak: float = 1.0, sigma: float = 1.5) -> float:
    """Mean SSIM over all valid (unpadded) Gaussian windows, per channel, then averaged.

    Accepts ``[H, W]``, ``[C, H, W]`` or ``[B, C, H, W]``.
    """
    x, y = _as_tensor(x), _as_tensor(y)
    if x.shape != y.shape:
        raise ValueError(f"ssim: shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    while x.dim() < 4:
        x, y = x.unsqueeze(0), y.unsqueeze(0)
    B, C, H, W = x.shape
    if H < window or W < window:
        raise ValueError(f"ssim: image {H}x{W} is smaller than the {window}x{window} window")
    x = x.reshape(B * C, 1, H, W)
    y = y.reshape(B * C, 1, H, W)
    w = gaussian_window(window, sigma)[None, None]
    c1 = (K1 * peak) ** 2
    c2 = (K2 * peak) ** 2

    mu_x = F.conv2d(x, w)
    mu_y = F.conv2d(y, w)
    sxx = F.conv2d(x * x, w) - mu_x ** 2
    syy = F.conv2d(y * y, w) - mu_y ** 2
    sxy = F.conv2d(x * y, w) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return float((num / den).mean())


@dataclass
class MetricReport:
    """Per-image rows plus per-dataset and count-weighted overall means."""

    rows: list = field(default_factory=list)  # (dataset, image, psnr, ssim)

    def datasets(self) -> list:
        seen = []
        for d, *_ in self.rows:
            if d not in seen:
                seen.append(d)
        return seen

    @staticmethod
    def _mean(values):
        finite = [v for v in values if math.isfinite(v)]
        if len(finite) < len(values):
            warnings.warn(f"{len(values) - len(finite)} infinite PSNR value(s) excluded from the mean", stacklevel=3)
        return (sum(finite) / len(finite) if finite else math.nan), len(finite)

    def summary(self) -> dict:
        """``{dataset: (count, mean_psnr, mean_ssim)}``, plus the count-weighted ``"Average"``."""
        out = {}
        psnr_acc = ssim_acc = 0.0
        psnr_n = ssim_n = 0
        for d in self.datasets():
            rows = [r for r in self.rows if r[0] == d]
            mp, n_p = self._mean([r[2] for r in rows])
            ms = sum(r[3] for r in rows) / len(rows)
            out[d] = (len(rows), mp, ms)
            if n_p:
                psnr_acc += mp * n_p
                psnr_n += n_p
            ssim_acc += ms * len(rows)
            ssim_n += len(rows)
        out["Average"] = (len(self.rows), psnr_acc / psnr_n if psnr_n else math.nan, ssim_acc / ssim_n)
        return out

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dataset", "image", "psnr", "ssim"])
            for d, name, p, s in self.rows:
                w.writerow([d, name, f"{p:.6f}", f"{s:.6f}"])

    def to_markdown(self) -> str:
        summ = self.summary()
        names = [d for d in summ if d != "Average"] + ["Average"]
        head = "| Metric | " + " | ".join(f"{d} ({summ[d][0]})" for d in names) + " |"
        sep = "|---" * (len(names) + 1) + "|"
        prow = "| PSNR | " + " | ".join(f"{summ[d][1]:.2f}" for d in names) + " |"
        srow = "| SSIM | " + " | ".join(f"{summ[d][2]:.3f}" for d in names) + " |"
        return "\n".join([head, sep, prow, srow]) + "\n"


def _score(T_hat, T):
    if isinstance(T_hat, (tuple, list)):
        T_hat = T_hat[0]
    T_hat = T_hat.squeeze(0).clamp(0.0, 1.0)
    return psnr(T_hat, T), ssim(T_hat, T)


@torch.no_grad()
def evaluate_pairs(model: Callable, pairs) -> MetricReport:
    """Score ``model`` on in-memory ``(dataset, image, I, T)`` tuples of ``[3, H, W]`` tensors."""
    report = MetricReport()
    for d, name, I, T in pairs:
        report.rows.append((d, name, *_score(model(I.unsqueeze(0)), T)))
    if not report.rows:
        raise DataError("no image pairs to evaluate")
    return report


@torch.no_grad()
def evaluate_dataset(model: Callable, dataset_dir) -> MetricReport:
    """Score ``model`` (blended ``[1, 3, H, W]`` -> transmission estimate) on every pair.

    ``dataset_dir`` is either one pair directory or a directory of them; each
    subdirectory becomes one dataset in the report.
    """
    report = MetricReport()
    for d in dataset_dirs(dataset_dir):
        for name, b, t in list_pairs(d):
            report.rows.append((d.name, name, *_score(model(load_png(b).unsqueeze(0)), load_png(t))))
    if not report.rows:
        raise DataError(f"no image pairs found under {dataset_dir}")
    return report
