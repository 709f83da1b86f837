"""Training configuration: YAML file, dotted ``--key value`` overrides and ``DPIT_SEED``.

Keys (all optional in a file; unset keys take the stage defaults)::

    stage: llcn | dscrt | finetune
    seed: 0
    epochs: 80                # 80 / 80 / 20 by stage
    batch_size: 2             # 2 for llcn, 1 otherwise
    accumulate: 2             # gradient accumulation steps; 2 for llcn, 1 otherwise
    lr: 1.0e-4
    betas: [0.9, 0.999]
    image_size: 224           # 224 for llcn, 384 otherwise
    prior_loss_weight: 0.0    # finetune only: extra weight on the LLCN correction loss
    llcn_ckpt: null           # dscrt only: frozen LLCN checkpoint supplying T_prior (else T_prior = I)
    llcn: {method: local_linear, widths: [16, 32, 64, 128]}
    network: {channels: [...], window_size: 4, num_heads: 2, ffn_expansion: 2,
              blocks_per_site: 1, mugi_blocks: 1}
    interaction: {kind: dscrab}
    loss: {lambda1: 1, lambda2: 1, lambda3: 0.01, lambda4: 0.2}
    data:
      root: null              # pair dir, or dir with synthetic/ real/ nature/ val/ subdirs
      synthetic: null         # overrides root/synthetic
      real: null
      nature: null
      val: null
      synthetic_count: 500    # procedural pairs when no synthetic dir is given
      val_count: 8            # procedural held-out pairs when no val dir is given
      mix: [0.6, 0.2, 0.2]
      samples_per_epoch: 4000 # null: one shuffled pass over all training pairs per epoch
      train_eval_max: 64      # training pairs scored after each epoch for the log
"""
from __future__ import annotations

import copy
import os
import re
from pathlib import Path

import yaml

from ..dscrt import NetworkConfig
from ..errors import ConfigurationError
from ..llcm import LLCNConfig, MODELING_METHODS
from ..losses import LossWeights
from ..synth import DatasetMix

STAGES = ("llcn", "dscrt", "finetune")

STAGE_DEFAULTS = {
    "llcn": {"epochs": 80, "batch_size": 2, "accumulate": 2, "image_size": 224},
    "dscrt": {"epochs": 80, "batch_size": 1, "accumulate": 1, "image_size": 384},
    "finetune": {"epochs": 20, "batch_size": 1, "accumulate": 1, "image_size": 384},
}

BASE_DEFAULTS = {
    "stage": "llcn",
    "seed": None,
    "lr": 1e-4,
    "betas": [0.9, 0.999],
    "prior_loss_weight": 0.0,
    "llcn_ckpt": None,
    "llcn": {"method": "local_linear", "widths": [16, 32, 64, 128]},
    "network": {"channels": [16, 32, 64, 96, 128, 160], "window_size": 4, "num_heads": 2,
                "ffn_expansion": 2, "blocks_per_site": 1, "mugi_blocks": 1},
    "interaction": {"kind": "dscrab"},
    "loss": {"lambda1": 1.0, "lambda2": 1.0, "lambda3": 0.01, "lambda4": 0.2},
    "data": {"root": None, "synthetic": None, "real": None, "nature": None, "val": None,
             "synthetic_count": 500, "val_count": 8, "mix": [0.6, 0.2, 0.2], "samples_per_epoch": 4000,
             "train_eval_max": 64},
    "ablation": {"methods": ["local_linear", "global_linear", "direct"],
                 "blocks": ["mugi", "daib", "dscrab"], "prior": [False, True],
                 "epochs": None},
}


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (extra or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_dotted(d: dict, key: str, value) -> None:
    parts = key.split(".")
    node = d
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigurationError(f"unknown config key '{key}'")
        node = node[p]
    if parts[-1] not in node and key not in ("epochs", "batch_size", "accumulate", "image_size"):
        raise ConfigurationError(f"unknown config key '{key}'")
    node[parts[-1]] = value


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-3`` (no dot) as a float, as YAML 1.2 does."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)?(?:\.[0-9_]*)?[eE][-+]?[0-9]+$|^[-+]?[0-9][0-9_]*\.[0-9_]*$"
               r"|^[-+]?\.[0-9_]+$|^[-+]?\.(?:inf|Inf|INF)$|^\.(?:nan|NaN|NAN)$"),
    list("-+0123456789."),
)


def _load_yaml(text):
    return yaml.load(text, Loader=_Loader)


def parse_value(text: str):
    """``--key value`` values are parsed as YAML scalars/lists (``3``, ``1e-3``, ``[1, 0, 0]``, ``null``)."""
    try:
        return _load_yaml(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse override value {text!r}: {exc}") from exc


class TrainConfig:
    """Resolved configuration for one training stage.

    Holds the raw nested mapping (``raw``) plus typed views of its parts.
    """

    def __init__(self, raw: dict):
        stage = raw.get("stage", "llcn")
        if stage not in STAGES:
            raise ConfigurationError(f"unknown stage '{stage}', expected one of {STAGES}")
        raw = _merge(_merge(BASE_DEFAULTS, STAGE_DEFAULTS[stage]), raw)
        if raw.get("seed") is None:
            env = os.environ.get("DPIT_SEED")
            try:
                raw["seed"] = int(env) if env not in (None, "") else 0
            except ValueError as exc:
                raise ConfigurationError(f"DPIT_SEED must be an integer, got {env!r}") from exc
        self.raw = raw
        self._validate()

    def _validate(self):
        r = self.raw
        for key in ("epochs", "batch_size", "accumulate", "image_size"):
            v = r[key]
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigurationError(f"{key} must be a positive integer, got {v!r}")
        if not isinstance(r["lr"], (int, float)) or r["lr"] <= 0:
            raise ConfigurationError(f"lr must be positive, got {r['lr']!r}")
        if len(r["betas"]) != 2 or not all(0 <= b < 1 for b in r["betas"]):
            raise ConfigurationError(f"betas must be two values in [0, 1), got {r['betas']!r}")
        if r["llcn"]["method"] not in MODELING_METHODS:
            raise ConfigurationError(f"unknown llcn.method {r['llcn']['method']!r}")
        # typed views raise ConfigurationError on bad values
        self.mix
        self.loss_weights
        self.llcn_config
        if self.stage != "llcn":
            self.network_config

    stage = property(lambda self: self.raw["stage"])
    seed = property(lambda self: int(self.raw["seed"]))
    epochs = property(lambda self: self.raw["epochs"])
    batch_size = property(lambda self: self.raw["batch_size"])
    accumulate = property(lambda self: self.raw["accumulate"])
    lr = property(lambda self: float(self.raw["lr"]))
    betas = property(lambda self: tuple(float(b) for b in self.raw["betas"]))
    image_size = property(lambda self: self.raw["image_size"])
    data = property(lambda self: self.raw["data"])

    @property
    def mix(self) -> DatasetMix:
        d = self.raw["data"]
        n = d["samples_per_epoch"]
        return DatasetMix(tuple(float(x) for x in d["mix"]), 1 if n is None else n)

    @property
    def samples_per_epoch(self):
        n = self.raw["data"]["samples_per_epoch"]
        return None if n is None else int(n)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(**{k: float(v) for k, v in self.raw["loss"].items()})

    @property
    def llcn_config(self) -> LLCNConfig:
        return LLCNConfig(widths=tuple(self.raw["llcn"]["widths"]), image_size=self.image_size)

    @property
    def network_config(self) -> NetworkConfig:
        n = dict(self.raw["network"])
        n["channels"] = tuple(n["channels"])
        if n.get("gp_channels") is not None:
            n["gp_channels"] = tuple(n["gp_channels"])
        return NetworkConfig(interaction=self.raw["interaction"]["kind"], **n)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def with_overrides(self, **dotted) -> "TrainConfig":
        raw = copy.deepcopy(self.raw)
        for k, v in dotted.items():
            set_dotted(raw, k.replace("__", "."), v)
        return TrainConfig(raw)


def load_config(path=None, overrides: dict | None = None, stage: str | None = None) -> TrainConfig:
    """Read a YAML file (optional), apply dotted overrides, fill stage defaults."""
    raw = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file {path} does not exist")
        with open(path) as fh:
            raw = _load_yaml(fh) or {}
        if not isinstance(raw, dict):
            raise ConfigurationError(f"config file {path} must hold a mapping")
    if stage is not None:
        raw["stage"] = stage
    full = _merge(BASE_DEFAULTS, raw)
    for k, v in (overrides or {}).items():
        set_dotted(full, k, v)
    # stage defaults fill only what neither the file nor the overrides set
    explicit = set(raw) | {k.split(".")[0] for k in (overrides or {})}
    st = full.get("stage", "llcn")
    if st not in STAGES:
        raise ConfigurationError(f"unknown stage '{st}', expected one of {STAGES}")
    for k, v in STAGE_DEFAULTS[st].items():
        if k not in explicit:
            full[k] = v
    return TrainConfig(full)
