"""Command-line interface.

Every training subcommand accepts ``--config FILE`` plus any number of
``--dotted.key value`` overrides (``--lr 1e-3``, ``--data.samples_per_epoch null``).
Exit codes: 0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def _overrides(tokens) -> dict:
    from .harness.config import parse_value

    out, i = {}, 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigurationError(f"unexpected argument {tok!r}; overrides look like --key value")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigurationError(f"override --{key} has no value")
            value = tokens[i + 1]
            i += 2
        out[key.replace("-", "_")] = parse_value(value)
    return out


def _progress(stream=sys.stderr):
    def show(row):
        print(f"epoch {row['epoch']:>4}  loss {row['loss_total']:.5f}  train PSNR {row['train_psnr']:.2f} dB  "
              f"val L1 {row['val_l1']:.5f}", file=stream, flush=True)
    return show


def _config(args, extra, stage):
    from .harness.config import load_config

    ov = _overrides(extra)
    for key in ("epochs", "seed"):
        if getattr(args, key, None) is not None:
            ov[key] = getattr(args, key)
    if getattr(args, "data", None) is not None:
        ov["data.root"] = args.data
    return load_config(args.config, ov, stage=stage)


def cmd_synth(args, extra):
    from .imageio import save_png
    from .synth import make_synthetic_pool

    if extra:
        raise ConfigurationError(f"synth takes no overrides, got {extra}")
    if args.count < 1 or args.size < 1:
        raise ConfigurationError("--count and --size must be positive")
    out = Path(args.out)
    pool = make_synthetic_pool(args.count, args.size, np.random.default_rng(args.seed))
    rows = []
    for i, pair in enumerate(pool):
        name = f"{i:05d}"
        save_png(pair.mixed, out / "blended" / f"{name}.png")
        save_png(pair.transmission, out / "transmission" / f"{name}.png")
        save_png(pair.reflection, out / "reflection" / f"{name}.png")
        rows.append((name, pair.coefficients.gamma1, pair.coefficients.gamma2))
    with open(out / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "gamma1", "gamma2"])
        for name, g1, g2 in rows:
            w.writerow([name, f"{g1:.6f}", f"{g2:.6f}"])
    print(f"wrote {len(rows)} pairs to {out}")


def _train(args, extra, stage, **kw):
    from .harness.train import train_stage

    cfg = _config(args, extra, stage)
    res = train_stage(cfg, out=args.out, log_dir=args.log_dir, progress=_progress(), **kw)
    ck = res.checkpoint
    print(f"saved {args.out} (best epoch {ck.best_epoch}, val L1 {ck.best_val_l1:.6f}); log {res.log_path}")


def cmd_train_llcn(args, extra):
    _train(args, extra, "llcn")


def cmd_train_dscrt(args, extra):
    _train(args, extra, "dscrt", llcn_ckpt=args.llcn)


def cmd_finetune(args, extra):
    _train(args, extra, "finetune", llcn_ckpt=args.llcn, dscrt_ckpt=args.dscrt)


def cmd_infer(args, extra):
    from .harness.infer import infer

    if extra:
        raise ConfigurationError(f"infer takes no overrides, got {extra}")
    written = infer(args.ckpt, args.inp, args.out)
    print(f"wrote {len(written)} images to {args.out}")


def cmd_eval(args, extra):
    from .harness.checkpoint import Checkpoint
    from .harness.infer import transmission_estimator
    from .metrics import evaluate_dataset

    if extra:
        raise ConfigurationError(f"eval takes no overrides, got {extra}")
    report = evaluate_dataset(transmission_estimator(Checkpoint.load(args.ckpt)), args.data)
    if args.report:
        report.write_csv(args.report)
    md = report.to_markdown()
    if args.markdown:
        Path(args.markdown).parent.mkdir(parents=True, exist_ok=True)
        Path(args.markdown).write_text(md)
    print(md, end="")


def cmd_flops(args, extra):
    from .complexity import report
    from .dscrt import DPIT, DSCRT
    from .harness.config import load_config
    from .llcm import LLCN

    cfg = load_config(args.config, _overrides(extra), stage="finetune")
    if args.model == "llcn":
        model = LLCN(cfg.llcn_config)
    elif args.model == "dscrt":
        model = DSCRT(cfg.network_config)
    else:
        model = DPIT(LLCN(cfg.llcn_config), DSCRT(cfg.network_config))
    rep = report(model, args.input)
    text = rep.to_csv()
    if args.csv:
        Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
        Path(args.csv).write_text(text)
    print(text)
    print(rep.pretty())


def cmd_ablation(args, extra):
    from .harness.ablation import run_ablation

    cfg = _config(args, extra, "llcn")

    def show(name, row):
        print(f"[{name}] epoch {row['epoch']:>4}  loss {row['loss_total']:.5f}  val L1 {row['val_l1']:.5f}",
              file=sys.stderr, flush=True)

    res = run_ablation(cfg, args.out, progress=show)
    print(res.to_markdown(), end="")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpit", description="Dual-prior reflection removal: data, training, evaluation.",
                                allow_abbrev=False)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write procedural synthetic pairs and manifest.csv", allow_abbrev=False)
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int, default=64)
    s.set_defaults(func=cmd_synth)

    def training(name, func, help_):
        t = sub.add_parser(name, help=help_, allow_abbrev=False)
        t.add_argument("--config")
        t.add_argument("--data", help="dataset root (sets data.root)")
        t.add_argument("--epochs", type=int)
        t.add_argument("--seed", type=int)
        t.add_argument("--out", required=True, help="checkpoint path")
        t.add_argument("--log-dir", help="where train_log.csv and report.md go (default: checkpoint directory)")
        t.set_defaults(func=func)
        return t

    training("train-llcn", cmd_train_llcn, "train the correction network")
    t = training("train-dscrt", cmd_train_dscrt, "train the separation network")
    t.add_argument("--llcn", help="frozen LLCN checkpoint supplying the prior (default: T_prior = I)")
    t = training("finetune-dpit", cmd_finetune, "compose both checkpoints and fine-tune jointly")
    t.add_argument("--llcn", help="stage-1 LLCN checkpoint (omit both to train a fresh DPIT jointly)")
    t.add_argument("--dscrt", help="stage-1 separation-network checkpoint")

    s = sub.add_parser("infer", help="write T, R, Phi and T_prior PNGs per input", allow_abbrev=False)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="PSNR/SSIM over pair directories", allow_abbrev=False)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--report", help="per-image CSV")
    s.add_argument("--markdown", help="summary table")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("flops", help="parameter and FLOPs report", allow_abbrev=False)
    s.add_argument("--config")
    s.add_argument("--input", type=int, default=224)
    s.add_argument("--model", choices=("dpit", "dscrt", "llcn"), default="dpit")
    s.add_argument("--csv", help="also write the CSV here")
    s.set_defaults(func=cmd_flops)

    s = sub.add_parser("ablation", help="train the variant grid and write ablation tables", allow_abbrev=False)
    s.add_argument("--config")
    s.add_argument("--data")
    s.add_argument("--epochs", type=int, help="sets ablation.epochs")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ablation)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if args.command == "ablation" and args.epochs is not None:
        extra = list(extra) + ["--ablation.epochs", str(args.epochs)]
        args.epochs = None
    try:
        args.func(args, extra)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
