"""Dual-prior reflection removal at desk scale.

Modules: :mod:`~dpit.synth` (data synthesis), :mod:`~dpit.llcm` (local linear
correction prior), :mod:`~dpit.dscra` (dual-stream attention block),
:mod:`~dpit.baselines` (alternative interaction blocks), :mod:`~dpit.dscrt`
(full network), :mod:`~dpit.losses`, :mod:`~dpit.metrics`,
:mod:`~dpit.complexity` and :mod:`~dpit.harness` (training, inference, ablation).
"""
from .dscra import DSCRAB, channel_reorganize, redistribute, window_partition, window_reverse
from .dscrt import DPIT, DSCRT, NetworkConfig, SeparationOutput
from .errors import ConfigurationError, DataError
from .llcm import LLCN, LLCNConfig, apply_correction, correction_loss
from .losses import LossWeights, total_loss
from .metrics import psnr, ssim
from .synth import BlendCoefficients, ImagePair, blend

__version__ = "0.1.0"

__all__ = [
    "BlendCoefficients", "ConfigurationError", "DataError", "DPIT", "DSCRAB", "DSCRT", "ImagePair", "LLCN",
    "LLCNConfig", "LossWeights", "NetworkConfig", "SeparationOutput", "apply_correction", "blend",
    "channel_reorganize", "correction_loss", "psnr", "redistribute", "ssim", "total_loss",
    "window_partition", "window_reverse",
]
