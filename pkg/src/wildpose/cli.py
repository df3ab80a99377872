"""Command-line entry point: ``wildpose <subcommand> --config cfg.json``.

Exit status: 0 on success, 1 on validation errors, 2 on file errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_json, load_run_config, resolve
from .errors import CameraSamplingExhausted, InvalidConfig, IoError, ValidationError
from .metrics import Protocol, evaluate
from .synthdata import GenConfig, generate_dataset, load_dataset

log = logging.getLogger("wildpose")

GRADCHECK_TOL = 1e-4


def _run_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed).validate()
    return cfg


def _datasets(args, cfg: RunConfig):
    full3d = load_dataset(resolve(args.config, cfg.data.full3d))
    only2d_path = resolve(args.config, cfg.data.only2d)
    same = only2d_path == resolve(args.config, cfg.data.full3d)
    only2d = full3d if same else load_dataset(only2d_path)
    return full3d, only2d


def _progress(every: int):
    def on_step(s):
        if every and s.iteration % every == 0:
            terms = " ".join(f"{k}={v:.4g}" for k, v in s.terms.items())
            log.info("step %d loss=%.4g %s", s.iteration, s.loss, terms)
    return on_step


def cmd_gen(args) -> None:
    d = load_json(args.config) if args.config else {}
    cfg = GenConfig.from_dict(d)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.count is not None:
        cfg = replace(cfg, sample_count=args.count)
    path = generate_dataset(cfg, None, args.out)
    print(f"wrote {cfg.sample_count} samples ({cfg.only2d_count} Only2D) to {path}")


def cmd_pretrain(args) -> None:
    from .train import pretrain_2d

    cfg = _run_config(args)
    full3d, only2d = _datasets(args, cfg)
    init = load_checkpoint(args.resume, cfg.model) if args.resume else None
    ckpt = pretrain_2d(cfg, full3d, only2d, init=init, until=args.until, on_step=_progress(args.log_every))
    save_checkpoint(ckpt, args.out)
    print(f"pretrain stopped at iteration {ckpt.iteration}; checkpoint {args.out}")


def cmd_train(args) -> None:
    from .train import train_full

    cfg = _run_config(args)
    full3d, only2d = _datasets(args, cfg)
    init = load_checkpoint(args.init, cfg.model)
    out = Path(args.out)
    ckpt = train_full(cfg, init, full3d, only2d, until=args.until, out_dir=out, on_step=_progress(args.log_every))
    path = save_checkpoint(ckpt, out / "full.pwt")
    print(f"training stopped at iteration {ckpt.iteration}; checkpoint {path}")


def cmd_eval(args) -> None:
    if args.dataset:
        data_path = Path(args.dataset)
    elif args.config:
        data_path = resolve(args.config, load_run_config(args.config).data.eval)
    else:
        raise InvalidConfig("eval needs --dataset or a --config with data.eval")
    dataset = load_dataset(data_path)
    ckpt = load_checkpoint(args.checkpoint)
    report = evaluate(dataset, ckpt, Protocol(args.protocol))
    report.write(args.out)
    heat = "n/a" if report.heatmap_error_px is None else f"{report.heatmap_error_px:.3f} px"
    print(f"{report.protocol}: MPJPE {report.mpjpe_mm:.1f} mm, PCK@150 {100 * report.pck_150:.1f}%, "
          f"AUC {100 * report.auc:.1f}%, heatmap error {heat}")


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    opts = load_json(args.config) if args.config else {}
    unknown = set(opts) - {"repeats"}
    if unknown:
        raise InvalidConfig(f"unknown gradcheck keys: {sorted(unknown)}")
    worst = run_suite(seed=args.seed or 0, repeats=int(opts.get("repeats", 3)))
    for name, err in worst.items():
        print(f"{name:<22} {err:.3e}")
    overall = max(worst.values())
    print(f"worst {overall:.3e} ({'ok' if overall < GRADCHECK_TOL else 'FAILED'})")
    return 0 if overall < GRADCHECK_TOL else 1


def cmd_ablate(args) -> None:
    from .ablation import format_table, run_ablation

    cfg = _run_config(args)
    full3d, only2d = _datasets(args, cfg)
    eval_set = load_dataset(resolve(args.config, cfg.data.eval))
    out = Path(args.out)

    def on_row(row):
        log.info("config %s: PCK %.3f", row.variant.key, row.report.pck_150)
        save_checkpoint(row.checkpoint, out / f"ablation_{row.variant.key}.pwt")
        row.report.write(out / row.variant.key)

    rows = run_ablation(cfg, full3d, only2d, eval_set, on_row=on_row)
    table = format_table(rows)
    (out / "ablation.txt").write_text(table + "\n")
    print(table)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wildpose", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("gen", cmd_gen, "generate a synthetic dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int, help="override sample_count")

    for name, fn, help in (("pretrain", cmd_pretrain, "stage 1: 2D heatmap pre-training"),
                           ("train", cmd_train, "stage 2: full mixed training")):
        sp = add(name, fn, help)
        sp.add_argument("--out", required=True, help="checkpoint path (pretrain) or output directory (train)")
        sp.add_argument("--until", type=int, help="stop at this iteration (resume later)")
        sp.add_argument("--log-every", type=int, default=100)
        if name == "pretrain":
            sp.add_argument("--resume", help="Pretrain2D checkpoint to continue from")
        else:
            sp.add_argument("--init", required=True, help="Pretrain2D checkpoint, or Full checkpoint to resume")

    sp = add("eval", cmd_eval, "evaluate a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--dataset", help="dataset file (default: data.eval from --config)")
    sp.add_argument("--protocol", default=Protocol.UNSCALED.value, choices=[q.value for q in Protocol])
    sp.add_argument("--out", required=True, help="directory for report.json and pck_curve.csv")

    add("gradcheck", cmd_gradcheck, "finite-difference check of every op and loss")

    sp = add("ablate", cmd_ablate, "train and compare the four ablation configurations")
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", stream=sys.stderr)
    try:
        status = args.fn(args)
    except (ValidationError, CameraSamplingExhausted) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except (IoError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return status or 0
