"""Checkpoint files: schema version, stage, config echo, flat tensor map and the best-validation record.

A checkpoint is a plain ``torch.save`` dictionary, loaded back with
``weights_only=True``, so tensors round-trip bit-exactly.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn as nn

from ..dscrt import DPIT, DSCRT
from ..errors import ConfigurationError
from ..llcm import LLCN, DirectGenerationNet, GlobalLinearNet
from .config import TrainConfig

SCHEMA_VERSION = 1

MODEL_KINDS = ("llcn", "global_linear", "direct", "dscrt", "dpit")

_LLCN_CLASSES = {"local_linear": LLCN, "global_linear": GlobalLinearNet, "direct": DirectGenerationNet}


def llcn_kind(method: str) -> str:
    return "llcn" if method == "local_linear" else method


def build_model(kind: str, cfg: TrainConfig) -> nn.Module:
    """Freshly initialised model of ``kind`` sized by ``cfg``."""
    if kind in ("llcn", "global_linear", "direct"):
        method = "local_linear" if kind == "llcn" else kind
        return _LLCN_CLASSES[method](cfg.llcn_config)
    if kind == "dscrt":
        return DSCRT(cfg.network_config)
    if kind == "dpit":
        return DPIT(LLCN(cfg.llcn_config), DSCRT(cfg.network_config))
    raise ConfigurationError(f"unknown model kind '{kind}', expected one of {MODEL_KINDS}")


@dataclass
class Checkpoint:
    stage: str
    model: str
    config: dict
    state: "OrderedDict[str, torch.Tensor]"
    best_val_l1: float
    best_epoch: int
    schema_version: int = SCHEMA_VERSION
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_module(cls, module: nn.Module, stage: str, kind: str, cfg: TrainConfig,
                    best_val_l1: float, best_epoch: int) -> "Checkpoint":
        state = OrderedDict((k, v.detach().clone()) for k, v in module.state_dict().items())
        return cls(stage, kind, cfg.to_dict(), state, float(best_val_l1), int(best_epoch))

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "stage": self.stage,
            "model": self.model,
            "config": self.config,
            "state": self.state,
            "best_val_l1": self.best_val_l1,
            "best_epoch": self.best_epoch,
            "extra": self.extra,
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.to_dict(), path)
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"checkpoint {path} does not exist")
        try:
            d = torch.load(path, map_location="cpu", weights_only=True)
        except Exception as exc:  # unpickling errors come in many types
            raise ConfigurationError(f"cannot read checkpoint {path}: {exc}") from exc
        if not isinstance(d, dict) or d.get("schema_version") != SCHEMA_VERSION:
            raise ConfigurationError(f"{path}: unsupported checkpoint schema {d.get('schema_version') if isinstance(d, dict) else d!r}")
        if d.get("model") not in MODEL_KINDS:
            raise ConfigurationError(f"{path}: unknown model kind {d.get('model')!r}")
        return cls(d["stage"], d["model"], d["config"], OrderedDict(d["state"]),
                   float(d["best_val_l1"]), int(d["best_epoch"]), d["schema_version"], d.get("extra", {}))

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(self.config)

    def build(self) -> nn.Module:
        """Model with the stored weights, in eval mode."""
        model = build_model(self.model, self.train_config)
        model.load_state_dict(self.state, strict=True)
        return model.eval()

    def sub_state(self, prefix: str) -> "OrderedDict[str, torch.Tensor]":
        """Entries under ``prefix.``, with the prefix stripped (e.g. ``dscrt`` from a DPIT checkpoint)."""
        p = prefix + "."
        return OrderedDict((k[len(p):], v) for k, v in self.state.items() if k.startswith(p))
