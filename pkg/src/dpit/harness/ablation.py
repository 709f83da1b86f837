"""Ablation grid: prior modelling methods and interaction blocks with and without the prior.

Table "methods" trains the three LLCN variants (local linear, global linear,
direct generation) on identical data, seed and epochs and compares their
validation L1. Table "blocks" trains the separation network with each
interaction block, with the prior switched off (``T_prior = I``) or supplied
by the trained local-linear LLCN. Parameters and FLOPs come from the
complexity module; the FLOPs added by the prior are checked against the
standalone LLCN count.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from ..complexity import count_flops, count_params
from ..errors import ConfigurationError
from ..llcm import MODELING_METHODS
from ..baselines import BLOCK_KINDS
from ..metrics import evaluate_pairs
from . import data as D
from .checkpoint import Checkpoint
from .config import TrainConfig
from .infer import transmission_estimator
from .train import train_stage

METHOD_LABELS = {"local_linear": "T = sI + b", "global_linear": "T = aI + b (global)", "direct": "T = f(I)"}


@dataclass
class AblationRow:
    table: str
    variant: str
    params: int
    flops: int
    val_l1: float
    metrics: dict  # dataset -> (psnr, ssim)
    prior: Optional[bool] = None
    prior_flops_delta: Optional[int] = None


@dataclass
class AblationResult:
    rows: list = field(default_factory=list)
    trend_ok: Optional[bool] = None
    additivity_ok: Optional[bool] = None
    llcn_flops: Optional[int] = None

    def datasets(self) -> list:
        seen = []
        for r in self.rows:
            for d in r.metrics:
                if d not in seen:
                    seen.append(d)
        return seen

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        ds = self.datasets()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["table", "variant", "prior", "params", "flops", "prior_flops_delta", "val_l1"]
                       + [f"{d}_{m}" for d in ds for m in ("psnr", "ssim")])
            for r in self.rows:
                w.writerow([r.table, r.variant, "" if r.prior is None else int(r.prior), r.params, r.flops,
                            "" if r.prior_flops_delta is None else r.prior_flops_delta, f"{r.val_l1:.8e}"]
                           + [f"{r.metrics[d][i]:.6f}" if d in r.metrics else "" for d in ds for i in (0, 1)])
        return path

    def to_markdown(self) -> str:
        ds = self.datasets()
        metric_head = " | ".join(f"{d} PSNR | {d} SSIM" for d in ds)
        metric_sep = "|---|---" * len(ds)

        def metric_cells(r):
            return " | ".join(f"{r.metrics[d][0]:.2f} | {r.metrics[d][1]:.3f}" if d in r.metrics else "- | -" for d in ds)

        lines = ["## Prior modelling methods", "",
                 f"| Method | Params (M) | FLOPs (G) | val L1 | {metric_head} |",
                 f"|---|---|---|---{metric_sep}|"]
        for r in self.rows:
            if r.table == "methods":
                lines.append(f"| {r.variant} | {r.params / 1e6:.4f} | {r.flops / 1e9:.4f} | {r.val_l1:.5f} | {metric_cells(r)} |")
        if self.trend_ok is not None:
            lines += ["", f"Trend check (local linear has the lowest val L1): {'PASS' if self.trend_ok else 'FAIL (flagged)'}"]
        lines += ["", "## Interaction blocks", "",
                  f"| Block | Prior | Params (M) | FLOPs (G) | val L1 | {metric_head} |",
                  f"|---|---|---|---|---{metric_sep}|"]
        for r in self.rows:
            if r.table == "blocks":
                flops = f"{r.flops / 1e9:.4f}"
                if r.prior_flops_delta is not None:
                    flops += f" (+{r.prior_flops_delta / 1e9:.4f})"
                lines.append(f"| {r.variant} | {'yes' if r.prior else 'no'} | {r.params / 1e6:.4f} | {flops} | "
                             f"{r.val_l1:.5f} | {metric_cells(r)} |")
        if self.additivity_ok is not None:
            lines += ["", f"Prior FLOPs delta equals standalone LLCN FLOPs ({self.llcn_flops}): "
                          f"{'PASS' if self.additivity_ok else 'FAIL (flagged)'}"]
        return "\n".join(lines) + "\n"


def _stage_config(base: TrainConfig, stage: str, epochs: Optional[int], **dotted) -> TrainConfig:
    raw = base.to_dict()
    raw["stage"] = stage
    if epochs is not None:
        raw["epochs"] = int(epochs)
    cfg = TrainConfig(raw)
    return cfg.with_overrides(**dotted) if dotted else cfg


def run_ablation(base: TrainConfig, out_dir, progress: Optional[Callable[[str, dict], None]] = None) -> AblationResult:
    """Train every configured variant with the base seed and data; writes ``ablation.csv`` and ``ablation.md``."""
    spec = base.raw["ablation"]
    methods, blocks, priors = list(spec["methods"]), list(spec["blocks"]), [bool(p) for p in spec["prior"]]
    for m in methods:
        if m not in MODELING_METHODS:
            raise ConfigurationError(f"unknown ablation method '{m}'")
    for b in blocks:
        if b not in BLOCK_KINDS:
            raise ConfigurationError(f"unknown ablation block '{b}'")
    epochs = spec.get("epochs")
    out_dir = Path(out_dir)
    result = AblationResult()
    size = base.image_size
    val = [(d, n, p.mixed, p.transmission) for d, n, p in D.build_val(base.data, size, base.seed)]

    def run(name, cfg, **kw):
        tick = (lambda row: progress(name, row)) if progress else None
        res = train_stage(cfg, out=out_dir / "checkpoints" / f"{name}.pt", log_dir=out_dir / "runs" / name,
                          progress=tick, **kw)
        ckpt = res.checkpoint
        model = ckpt.build()
        report = evaluate_pairs(transmission_estimator(ckpt), val).summary()
        metrics = {d: (v[1], v[2]) for d, v in report.items() if d != "Average"}
        return ckpt, model, metrics

    llcn_path = None
    val_l1 = {}
    for m in methods:
        cfg = _stage_config(base, "llcn", epochs, **{"llcn.method": m})
        ckpt, model, metrics = run(f"method_{m}", cfg)
        val_l1[m] = ckpt.best_val_l1
        result.rows.append(AblationRow("methods", METHOD_LABELS[m], count_params(model), count_flops(model, size),
                                       ckpt.best_val_l1, metrics))
        if m == "local_linear":
            llcn_path = out_dir / "checkpoints" / f"method_{m}.pt"
    if "local_linear" in val_l1 and len(val_l1) > 1:
        result.trend_ok = all(val_l1["local_linear"] < v for k, v in val_l1.items() if k != "local_linear")

    if blocks and any(priors) and llcn_path is None:
        cfg = _stage_config(base, "llcn", epochs, **{"llcn.method": "local_linear"})
        run("method_local_linear", cfg)
        llcn_path = out_dir / "checkpoints" / "method_local_linear.pt"
    if llcn_path is not None:
        llcn = Checkpoint.load(llcn_path).build()
        m = math.lcm(llcn.multiple, base.network_config.multiple)
        result.llcn_flops = count_flops(llcn, size + (-size) % m)

    deltas_ok = []
    for b in blocks:
        no_prior_flops = None
        for prior in priors:
            cfg = _stage_config(base, "dscrt", epochs, **{"interaction.kind": b})
            name = f"block_{b}_{'prior' if prior else 'noprior'}"
            ckpt, model, metrics = run(name, cfg, llcn_ckpt=llcn_path if prior else None)
            flops = count_flops(model, size)
            row = AblationRow("blocks", b, count_params(model), flops, ckpt.best_val_l1, metrics, prior=prior)
            if not prior:
                no_prior_flops = flops
            elif no_prior_flops is not None:
                row.prior_flops_delta = flops - no_prior_flops
                deltas_ok.append(row.prior_flops_delta == result.llcn_flops)
            result.rows.append(row)
    if deltas_ok:
        result.additivity_ok = all(deltas_ok)

    result.to_csv(out_dir / "ablation.csv")
    (out_dir / "ablation.md").write_text(result.to_markdown())
    return result
