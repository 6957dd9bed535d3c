"""Command-line entry point.

Subcommands: prepare-data, synth, train, eval, sweep-lambda, heatmap,
stress-eval, gradcheck, ablate. Configuration comes from a TOML file
(--config) with flags overriding it; every run echoes its resolved config
into the output directory. Exit codes: 0 success, 1 usage/config error,
2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config, override_from_flags
from .data import parse_interaction_log, prepare, split_folds, write_csv_flat
from .errors import ConfigError, DataError, NumericError, UktError, UsageError
from .experiments import (
    ablation_table,
    aleatory_stress_eval,
    end_to_end_gradient_check,
    export_covariance_heatmap,
    lambda_sweep,
)
from .model import VariantConfig, load_checkpoint, save_checkpoint
from .synth import generate_students
from .training import evaluate, train

log_ = logging.getLogger("ukt")

GRADCHECK_TOLERANCE = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract wants 1
        raise UsageError(f"{message}\n{self.format_usage()}")


def build_parser() -> _Parser:
    parser = _Parser(prog="ukt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--dataset", help="interaction log path")
        p.add_argument("--format", choices=["csv-flat", "csv-grouped"],
                       help="dataset layout")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--lambda", dest="lambda_", type=float,
                       help="contrastive loss weight")
        p.add_argument("--variant",
                       choices=["ukt", "no_cl", "no_wdist", "no_stocemb"])
        p.add_argument("--epochs", type=int)
        p.add_argument("--dim", type=int)
        p.add_argument("--heads", type=int)
        p.add_argument("--blocks", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--dropout", type=float)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--noise-rate", dest="noise_rate", type=float)
        p.add_argument("--quiet", action="store_true")
        return p

    common(sub.add_parser("prepare-data", help="parse, KC-expand, filter, chunk"))
    common(sub.add_parser("synth", help="generate a synthetic cohort"))
    common(sub.add_parser("train", help="train a model on a dataset"))
    p_eval = common(sub.add_parser("eval", help="evaluate a checkpoint"))
    p_eval.add_argument("--checkpoint", help="model checkpoint path")
    common(sub.add_parser("sweep-lambda", help="AUC across contrastive weights"))
    p_heat = common(sub.add_parser("heatmap", help="per-sequence covariance means"))
    p_heat.add_argument("--checkpoint", help="model checkpoint path")
    common(sub.add_parser("stress-eval", help="clean vs noised AUC per variant"))
    common(sub.add_parser("gradcheck", help="end-to-end finite-difference check"))
    common(sub.add_parser("ablate", help="train every ablation variant"))
    return parser


def _load_prepared(cfg: RunConfig):
    if not cfg.dataset:
        raise ConfigError("no dataset given (use --dataset or [data] in the config)")
    path = Path(cfg.dataset)
    if not path.exists():
        raise DataError(f"dataset not found: {path}")
    bundle = parse_interaction_log(path, cfg.dataset_format)
    return prepare(bundle, min_len=cfg.train.min_len, max_len=cfg.train.max_len)


def _plan(cfg: RunConfig):
    bundle = _load_prepared(cfg)
    return split_folds(bundle, cfg.test_fraction, cfg.folds_k, cfg.train.seed)


def _write_eval_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("split,auc,accuracy\n")
        for name, report in rows:
            fh.write(f"{name},{report.auc:.10g},{report.accuracy:.10g}\n")


def cmd_prepare_data(cfg: RunConfig, args, out: Path) -> int:
    bundle = _load_prepared(cfg)
    target = out / "prepared.csv"
    write_csv_flat(bundle, target)
    log_.info(
        "prepared %d sequences / %d interactions (%d KCs, %d questions) -> %s",
        len(bundle.sequences), bundle.num_interactions,
        bundle.num_kcs - 1, bundle.num_questions - 1, target,
    )
    return 0


def cmd_synth(cfg: RunConfig, args, out: Path) -> int:
    bundle = generate_students(cfg.synth)
    target = out / "cohort.csv"
    write_csv_flat(bundle, target)
    log_.info("synthesized %d sequences / %d interactions -> %s",
              len(bundle.sequences), bundle.num_interactions, target)
    return 0


def cmd_train(cfg: RunConfig, args, out: Path) -> int:
    plan = _plan(cfg)
    params, report = train(plan, cfg.train, cfg.variant,
                           metrics_path=out / "metrics.csv")
    save_checkpoint(params, out / "model.ckpt",
                    heads=cfg.train.heads, scale=cfg.train.scale)
    test_report = evaluate(params, plan.test_sequences(), cfg.variant,
                           cfg.train.attention(), batch_size=cfg.train.batch_size)
    _write_eval_csv(out / "eval.csv", [("val", report), ("test", test_report)])
    log_.info("best val auc %.4f (epoch %d); test auc %.4f acc %.4f",
              report.auc, report.best_epoch, test_report.auc, test_report.accuracy)
    return 0


def _checkpoint_setup(cfg: RunConfig, args):
    ckpt = getattr(args, "checkpoint", None)
    if not ckpt:
        raise ConfigError("this subcommand needs --checkpoint")
    if not Path(ckpt).exists():
        raise DataError(f"checkpoint not found: {ckpt}")
    params, meta = load_checkpoint(ckpt, with_meta=True)
    run_cfg = dataclasses.replace(
        cfg.train, dim=meta["dim"], blocks=meta["blocks"],
        heads=meta["heads"], scale=meta["scale"],
    )
    return params, run_cfg


def cmd_eval(cfg: RunConfig, args, out: Path) -> int:
    params, run_cfg = _checkpoint_setup(cfg, args)
    bundle = _load_prepared(cfg)
    report = evaluate(params, bundle.sequences, cfg.variant,
                      run_cfg.attention(), batch_size=run_cfg.batch_size)
    _write_eval_csv(out / "eval.csv", [("all", report)])
    log_.info("auc %.4f accuracy %.4f over %d sequences",
              report.auc, report.accuracy, len(bundle.sequences))
    return 0


def cmd_sweep_lambda(cfg: RunConfig, args, out: Path) -> int:
    plan = _plan(cfg)
    rows = lambda_sweep(plan, cfg.train, cfg.lambda_grid, cfg.variant,
                        folds=cfg.sweep_folds, out_path=out / "lambda_sweep.csv")
    best = max(rows, key=lambda r: r[1])
    log_.info("best lambda %.3g with auc %.4f", best[0], best[1])
    return 0


def cmd_heatmap(cfg: RunConfig, args, out: Path) -> int:
    params, run_cfg = _checkpoint_setup(cfg, args)
    bundle = _load_prepared(cfg)
    export_covariance_heatmap(
        params, bundle.sequences, out / "covariance_heatmap.csv",
        cfg.variant, run_cfg, per_dim=cfg.heatmap_per_dim,
    )
    log_.info("wrote covariance heatmap for %d sequences", len(bundle.sequences))
    return 0


def cmd_stress_eval(cfg: RunConfig, args, out: Path) -> int:
    plan = _plan(cfg)
    params_by_variant = {}
    variants = {}
    for name in cfg.stress_variants:
        variant = VariantConfig.named_variant(name, lambda_=cfg.variant.lambda_)
        params, _ = train(plan, cfg.train, variant)
        params_by_variant[name] = params
        variants[name] = variant
    rows = aleatory_stress_eval(
        params_by_variant, plan.test_sequences(), cfg.noise_rate,
        variants=variants, cfg=cfg.train, seed=cfg.train.seed,
        out_path=out / "stress_eval.csv",
    )
    for row in rows:
        log_.info("%s: degradation %.4f", row.variant, row.degradation)
    return 0


def cmd_gradcheck(cfg: RunConfig, args, out: Path) -> int:
    report = end_to_end_gradient_check(seed=cfg.train.seed,
                                       lambda_=cfg.variant.lambda_)
    print(f"max relative error {report.max_rel_error:.3e} ({report.worst_param})")
    with open(out / "gradcheck.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("parameter,max_rel_error\n")
        for name, err in sorted(report.per_param.items()):
            fh.write(f"{name},{err:.10g}\n")
    if report.max_rel_error >= GRADCHECK_TOLERANCE:
        raise NumericError(
            f"gradient check failed: {report.max_rel_error:.3e} "
            f">= {GRADCHECK_TOLERANCE}"
        )
    return 0


def cmd_ablate(cfg: RunConfig, args, out: Path) -> int:
    plan = _plan(cfg)
    rows = ablation_table(plan, cfg.train, lambda_=cfg.variant.lambda_,
                          out_path=out / "ablation.csv")
    for name, auc_, acc in rows:
        log_.info("%s: auc %.4f acc %.4f", name, auc_, acc)
    return 0


COMMANDS = {
    "prepare-data": cmd_prepare_data,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep-lambda": cmd_sweep_lambda,
    "heatmap": cmd_heatmap,
    "stress-eval": cmd_stress_eval,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            stream=sys.stderr,
            level=logging.WARNING if args.quiet else logging.INFO,
            format="%(levelname)s %(message)s",
        )
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = override_from_flags(cfg, args)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cfg.echo(out / "config.toml")
        return COMMANDS[args.command](cfg, args, out)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
