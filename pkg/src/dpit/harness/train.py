"""Stage training: LLCN alone, the separation network alone, then joint fine-tuning.

Every stage uses Adam with the configured moments and learning rate (no
weight decay, no schedule) and gradient accumulation over ``accumulate``
batches. Epoch 0 scores the untrained model; after each epoch the mean
unclamped L1 between the transmission estimate and the ground truth is
measured on the validation split and the weights with the lowest value
(earliest on ties) are kept.
"""
from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import torch
import torch.nn as nn

from ..dscrt import DPIT, DSCRT
from ..errors import ConfigurationError
from ..losses import PerceptualConfig, compute_components, total_loss
from ..metrics import psnr
from . import data as D
from .checkpoint import Checkpoint, build_model, llcn_kind
from .config import TrainConfig

LOG_COLUMNS = ("epoch", "loss_total", "loss_pix", "loss_grad", "loss_per", "loss_rec", "loss_prior",
               "train_psnr", "val_l1")


def _prior_mse(pred, T):
    return (pred - T).pow(2).mean()


class _Objective:
    """Model plus the stage's loss; ``step_loss`` returns ``(scalar, {column: value})``."""

    def __init__(self, stage: str, model: nn.Module, cfg: TrainConfig):
        self.stage = stage
        self.model = model
        self.cfg = cfg
        self.weights = cfg.loss_weights
        self.perceptual = PerceptualConfig()

    def parameters(self):
        return self.model.parameters()

    def predict(self, I):
        """``(SeparationOutput or None, T_prior)``."""
        if self.stage == "llcn":
            return None, self.model(I)
        if isinstance(self.model, DPIT):
            return self.model(I)
        return self.model(I, I), I

    def estimate(self, I):
        out, t_prior = self.predict(I)
        return t_prior if out is None else out.T_hat

    def step_loss(self, I, T, R):
        out, t_prior = self.predict(I)
        if out is None:
            loss = _prior_mse(t_prior, T)
            return loss, {"loss_total": loss, "loss_prior": loss}, t_prior
        c = compute_components(I, T, R, *out, perceptual=self.perceptual)
        loss = total_loss(c, self.weights)
        cols = {"loss_pix": c.pix, "loss_grad": c.grad, "loss_per": c.per, "loss_rec": c.rec}
        if self.stage == "finetune":
            prior = _prior_mse(t_prior, T)
            cols["loss_prior"] = prior
            if self.cfg.raw["prior_loss_weight"]:
                loss = loss + float(self.cfg.raw["prior_loss_weight"]) * prior
        cols["loss_total"] = loss
        return loss, cols, out.T_hat


@torch.no_grad()
def _score_train(obj: _Objective, pairs, batch_size: int) -> dict:
    sums, n, psnrs = {}, 0, []
    for I, T, R in D.batches(pairs, batch_size):
        _, cols, T_hat = obj.step_loss(I, T, R)
        for k, v in cols.items():
            sums[k] = sums.get(k, 0.0) + float(v) * I.shape[0]
        n += I.shape[0]
        psnrs += [psnr(t.clamp(0, 1), g) for t, g in zip(T_hat, T)]
    row = {k: v / n for k, v in sums.items()}
    row["train_psnr"] = sum(psnrs) / len(psnrs)
    return row


@torch.no_grad()
def validation_l1(estimate: Callable, val, batch_size: int = 1) -> float:
    """Mean absolute error of the (unclamped) transmission estimate over all validation pixels."""
    total, count = 0.0, 0
    pairs = [p for _, _, p in val]
    for I, T, _ in D.batches(pairs, batch_size):
        err = (estimate(I) - T).abs()
        total += float(err.sum())
        count += err.numel()
    return total / count


def _fmt(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, int):
        return str(v)
    return "inf" if math.isinf(v) else f"{v:.8e}"


def write_log(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in LOG_COLUMNS])
    return path


def read_log(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_report(result: "TrainResult", path) -> Path:
    cfg = result.config
    lines = [
        f"# Training report: stage `{cfg.stage}`",
        "",
        f"- model: `{result.checkpoint.model}`",
        f"- seed: {cfg.seed}, epochs: {cfg.epochs}, batch size: {cfg.batch_size}, accumulate: {cfg.accumulate}",
        f"- lr: {cfg.lr:g}, betas: {cfg.betas}, image size: {cfg.image_size}",
        f"- best epoch: {result.checkpoint.best_epoch}, best validation L1: {result.checkpoint.best_val_l1:.6f}",
        "",
        "| epoch | total loss | train PSNR (dB) | val L1 |",
        "|---|---|---|---|",
    ]
    for r in result.rows:
        lines.append(f"| {r['epoch']} | {r['loss_total']:.5f} | {r['train_psnr']:.2f} | {r['val_l1']:.5f} |")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    rows: list
    config: TrainConfig
    log_path: Optional[Path] = None
    report_path: Optional[Path] = None


def _adopt(cfg: TrainConfig, llcn: Optional[Checkpoint] = None, dscrt: Optional[Checkpoint] = None) -> TrainConfig:
    """``cfg`` with its architecture keys taken from the checkpoints being composed."""
    raw = cfg.to_dict()
    if llcn is not None:
        raw["llcn"] = dict(llcn.config["llcn"])
    if dscrt is not None:
        raw["network"] = dict(dscrt.config["network"])
        raw["interaction"] = dict(dscrt.config["interaction"])
    return TrainConfig(raw)


def _setup(cfg: TrainConfig, llcn_ckpt=None, dscrt_ckpt=None):
    """``(objective, model kind, effective config)`` for the configured stage."""
    if cfg.stage == "llcn":
        kind = llcn_kind(cfg.raw["llcn"]["method"])
        return _Objective("llcn", build_model(kind, cfg), cfg), kind, cfg
    if cfg.stage == "dscrt":
        path = llcn_ckpt or cfg.raw.get("llcn_ckpt")
        if path is None:
            return _Objective("dscrt", build_model("dscrt", cfg), cfg), "dscrt", cfg
        ck = Checkpoint.load(path)
        if ck.model != "llcn":
            raise ConfigurationError(f"{path} holds a '{ck.model}' model; the transmission prior needs an LLCN")
        cfg = _adopt(cfg, llcn=ck)
        llcn = ck.build().requires_grad_(False)
        model = DPIT(llcn, DSCRT(cfg.network_config))
        return _Objective("dscrt", model, cfg), "dpit", cfg
    if llcn_ckpt is None and dscrt_ckpt is None:
        # joint training of a freshly initialised DPIT
        return _Objective("finetune", build_model("dpit", cfg), cfg), "dpit", cfg
    if llcn_ckpt is None or dscrt_ckpt is None:
        raise ConfigurationError("finetune needs both an LLCN and a separation-network checkpoint (or neither)")
    lk, dk = Checkpoint.load(llcn_ckpt), Checkpoint.load(dscrt_ckpt)
    if lk.model != "llcn":
        raise ConfigurationError(f"{llcn_ckpt} holds a '{lk.model}' model, expected 'llcn'")
    if dk.model not in ("dscrt", "dpit"):
        raise ConfigurationError(f"{dscrt_ckpt} holds a '{dk.model}' model, expected 'dscrt' or 'dpit'")
    cfg = _adopt(cfg, llcn=lk, dscrt=dk)
    llcn = lk.build()
    dscrt = DSCRT(cfg.network_config)
    dscrt.load_state_dict(dk.state if dk.model == "dscrt" else dk.sub_state("dscrt"))
    return _Objective("finetune", DPIT(llcn, dscrt), cfg), "dpit", cfg


def _trainable(obj: _Objective):
    return [p for p in obj.model.parameters() if p.requires_grad]


def train_epoch(obj: _Objective, opt: torch.optim.Optimizer, batch_list, accumulate: int) -> None:
    """One pass over ``batch_list``, stepping ``opt`` every ``accumulate`` batches and after the last one."""
    opt.zero_grad(set_to_none=True)
    for i, (I, T, R) in enumerate(batch_list, 1):
        loss, _, _ = obj.step_loss(I, T, R)
        (loss / accumulate).backward()
        if i % accumulate == 0 or i == len(batch_list):
            opt.step()
            opt.zero_grad(set_to_none=True)


def train_stage(cfg: TrainConfig, out=None, log_dir=None, llcn_ckpt=None, dscrt_ckpt=None,
                progress: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train the stage named by ``cfg.stage``; writes the checkpoint, ``train_log.csv`` and ``report.md`` if paths are given."""
    torch.manual_seed(cfg.seed)
    pools, ratios = D.build_pools(cfg.data, cfg.image_size, cfg.seed)
    val = D.build_val(cfg.data, cfg.image_size, cfg.seed)
    obj, kind, cfg = _setup(cfg, llcn_ckpt, dscrt_ckpt)
    if isinstance(obj.model, DPIT) and obj.stage == "dscrt":
        obj.model.llcn.eval()
    sampler = D.EpochSampler(pools, ratios, cfg.samples_per_epoch, cfg.seed)
    train_eval = sampler.all_pairs[: int(cfg.data.get("train_eval_max") or len(sampler.all_pairs))]
    params = _trainable(obj)
    opt = torch.optim.Adam(params, lr=cfg.lr, betas=cfg.betas)

    def evaluate(epoch):
        obj.model.eval()
        row = {"epoch": epoch, **_score_train(obj, train_eval, cfg.batch_size)}
        row["val_l1"] = validation_l1(obj.estimate, val)
        return row

    rows = [evaluate(0)]
    best = (rows[0]["val_l1"], 0, copy.deepcopy(obj.model.state_dict()))
    if progress:
        progress(rows[0])
    for epoch in range(1, cfg.epochs + 1):
        obj.model.train()
        if isinstance(obj.model, DPIT) and obj.stage == "dscrt":
            obj.model.llcn.eval()
        train_epoch(obj, opt, list(D.batches(sampler.epoch(), cfg.batch_size)), cfg.accumulate)
        row = evaluate(epoch)
        rows.append(row)
        if row["val_l1"] < best[0]:
            best = (row["val_l1"], epoch, copy.deepcopy(obj.model.state_dict()))
        if progress:
            progress(row)

    obj.model.load_state_dict(best[2])
    obj.model.requires_grad_(True)
    ckpt = Checkpoint.from_module(obj.model, cfg.stage, kind, cfg, best[0], best[1])
    result = TrainResult(ckpt, rows, cfg)
    if out is not None:
        ckpt.save(out)
        log_dir = Path(log_dir) if log_dir is not None else Path(out).parent
    if log_dir is not None:
        result.log_path = write_log(rows, Path(log_dir) / "train_log.csv")
        result.report_path = write_report(result, Path(log_dir) / "report.md")
    return result


def train_stage1(cfg: TrainConfig, out=None, log_dir=None, llcn_ckpt=None, progress=None) -> TrainResult:
    if cfg.stage not in ("llcn", "dscrt"):
        raise ConfigurationError(f"stage 1 trains 'llcn' or 'dscrt', not '{cfg.stage}'")
    return train_stage(cfg, out, log_dir, llcn_ckpt=llcn_ckpt, progress=progress)


def train_stage2(llcn_ckpt, dscrt_ckpt, cfg: TrainConfig, out=None, log_dir=None, progress=None) -> TrainResult:
    if cfg.stage != "finetune":
        cfg = TrainConfig({**cfg.to_dict(), "stage": "finetune"})
    return train_stage(cfg, out, log_dir, llcn_ckpt=llcn_ckpt, dscrt_ckpt=dscrt_ckpt, progress=progress)
