"""Command-line front end.

Subcommands: generate, augment, train, match, evaluate, experiment,
sweep-bias, search, importance.  Exit code 0 on success; otherwise a
one-line diagnostic goes to stderr and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import harness
from .datagen import augment_irrelevant, read_dataset, write_dataset
from .evaluation import EffectEstimates, MetricReport, feature_importance, metrics
from .matching import (
    METRIC_ALIASES,
    impute_counterfactuals,
    read_match_report,
    write_match_report,
)
from .network import eval_forward, load_checkpoint, save_checkpoint, train
from .numcore import RandomStream


def _add_common(parser, out_required=True):
    parser.add_argument("--seed", type=int, default=None, help="master random seed")
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("--out", required=out_required, help="output path or directory")


def _add_experiment_flags(parser):
    parser.add_argument(
        "--metric", choices=sorted(METRIC_ALIASES), default=None, help="matching metric"
    )
    parser.add_argument("--no-fsl", action="store_true", help="ablate the selection layer")
    parser.add_argument("--no-ipm", action="store_true", help="ablate the balance term")
    parser.add_argument("--realizations", type=int, default=None, metavar="N")
    parser.add_argument("--workers", type=int, default=None, metavar="N")


def _experiment_config(args) -> harness.ExperimentConfig:
    overrides = {
        "seed": args.seed,
        "metric": getattr(args, "metric", None),
        "n_realizations": getattr(args, "realizations", None),
        "workers": getattr(args, "workers", None),
        "outdir": getattr(args, "out", None),
    }
    if getattr(args, "no_fsl", False):
        overrides["disable_fsl"] = True
    if getattr(args, "no_ipm", False):
        overrides["disable_ipm"] = True
    if getattr(args, "dataset", None):
        overrides["dataset"] = args.dataset
    return harness.load_experiment_config(args.config, overrides)


def _cmd_generate(args) -> int:
    cfg = _experiment_config(args)
    ds = harness.realization_dataset(cfg, 0)
    write_dataset(ds, args.out)
    print(f"wrote {ds.n} units x {ds.d} columns to {args.out}")
    return 0


def _cmd_augment(args) -> int:
    ds = read_dataset(args.dataset)
    stream = RandomStream(args.seed if args.seed is not None else 0)
    out = augment_irrelevant(ds, args.k, stream)
    write_dataset(out, args.out)
    print(f"appended {args.k} noise columns: {ds.d} -> {out.d}")
    return 0


def _cmd_train(args) -> int:
    cfg = _experiment_config(args)
    ds = read_dataset(args.dataset)
    stream = RandomStream(cfg.seed).split(0).split(2)
    params, history = train(cfg.effective_train_config(), ds, stream)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "checkpoint.npz")
    save_checkpoint(ckpt, params)
    if history:
        keys = list(history[0])
        harness._write_rows(
            os.path.join(args.out, "history.csv"), keys, [[row[k] for k in keys] for row in history]
        )
    print(f"trained {len(history)} epochs; checkpoint at {ckpt}")
    return 0


def _cmd_match(args) -> int:
    params = load_checkpoint(args.checkpoint)
    ds = read_dataset(args.dataset)
    metric = METRIC_ALIASES.get(args.metric or "euclid", args.metric)
    fr = eval_forward(params, ds)
    aux = fr.p_treated if metric == "propensity" else fr.representation
    mr = impute_counterfactuals(ds, fr.representation, metric, aux)
    write_match_report(args.out, ds, mr)
    print(f"matched {len(mr.pairs)} pairs (avg distance {mr.pair_cost:.6g}) -> {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    report = read_match_report(args.report)
    ds = read_dataset(args.dataset)
    if len(report["t"]) != ds.n:
        raise ValueError("match report and dataset disagree on the number of units")
    if ds.ite_true is None:
        raise ValueError("dataset lacks mu0/mu1 ground truth; cannot evaluate")
    sign = 2.0 * report["t"] - 1.0
    ite_hat = sign * (report["yf"] - report["cf_outcome"])
    est = EffectEstimates(
        ite_hat=ite_hat,
        ate_hat=float(ite_hat.mean()),
        ite_true=ds.ite_true,
        ate_true=float(ds.ite_true.mean()),
    )
    rep: MetricReport = metrics(est)
    harness._write_rows(
        args.out,
        ["stat", "value"],
        [
            ["n_units", rep.n_units],
            ["ate_hat", est.ate_hat],
            ["ate_true", est.ate_true],
            ["eps_ate", rep.eps_ate],
            ["pehe", rep.pehe],
            ["sqrt_pehe", rep.sqrt_pehe],
        ],
    )
    print(f"eps_ate={rep.eps_ate:.6g} sqrt_pehe={rep.sqrt_pehe:.6g} -> {args.out}")
    return 0


def _cmd_experiment(args) -> int:
    cfg = _experiment_config(args)
    summary = harness.run_experiment(cfg)
    print(
        f"{cfg.n_realizations} realizations ({summary['n_failed']} failed): "
        f"sqrt_pehe={summary['mean_sqrt_pehe']:.4f}+-{summary['std_sqrt_pehe']:.4f} "
        f"eps_ate={summary['mean_eps_ate']:.4f}+-{summary['std_eps_ate']:.4f}"
    )
    return 0


def _cmd_sweep_bias(args) -> int:
    cfg = _experiment_config(args)
    q_grid = [float(v) for v in args.qs.split(",") if v.strip()]
    rows = harness.bias_sweep(cfg, q_grid)
    for row in rows:
        print(f"q={row['q']:g}: sqrt_pehe={row['mean_sqrt_pehe']:.4f}")
    return 0


def _cmd_search(args) -> int:
    cfg = _experiment_config(args)
    grid = harness.read_grid_file(args.grid)
    best, ranking = harness.hyper_search(cfg, grid, budget=args.budget)
    harness.write_ranking(args.out, ranking)
    print(f"best candidate: {ranking[0][0]} (score {ranking[0][1]:.6g}) -> {args.out}")
    return 0


def _cmd_importance(args) -> int:
    params = load_checkpoint(args.checkpoint)
    imp = feature_importance(params)
    harness._write_rows(
        args.out, ["feature", "importance"], [[f"x{j}", v] for j, v in enumerate(imp)]
    )
    top = int(np.argmax(imp))
    print(f"{len(imp)} features (max importance at x{top}) -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="repmatch",
        description="treatment effect estimation by matching in a learned representation space",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthetic benchmark dataset -> CSV")
    _add_common(p)
    p.set_defaults(fn=_cmd_generate)

    p = sub.add_parser("augment", help="append irrelevant noise columns to a dataset")
    p.add_argument("dataset")
    p.add_argument("k", type=int, help="number of noise columns")
    _add_common(p)
    p.set_defaults(fn=_cmd_augment)

    p = sub.add_parser("train", help="train a model on a dataset CSV")
    p.add_argument("dataset")
    _add_common(p)
    _add_experiment_flags(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("match", help="impute counterfactuals with a trained checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    _add_common(p)
    p.add_argument("--metric", choices=sorted(METRIC_ALIASES), default="euclid")
    p.set_defaults(fn=_cmd_match)

    p = sub.add_parser("evaluate", help="metrics from a match report plus ground truth")
    p.add_argument("report")
    p.add_argument("dataset")
    _add_common(p)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("experiment", help="replicated end-to-end experiment")
    _add_common(p, out_required=False)
    _add_experiment_flags(p)
    p.set_defaults(fn=_cmd_experiment)

    p = sub.add_parser("sweep-bias", help="experiment at each selection-bias level q")
    p.add_argument("qs", help="comma-separated q values, e.g. 0,0.5,1")
    _add_common(p, out_required=False)
    _add_experiment_flags(p)
    p.set_defaults(fn=_cmd_sweep_bias)

    p = sub.add_parser("search", help="hyperparameter search over a grid file")
    p.add_argument("grid", help="key = v1; v2; ... file")
    _add_common(p)
    _add_experiment_flags(p)
    p.add_argument("--budget", type=int, default=harness.SEARCH_BUDGET)
    p.set_defaults(fn=_cmd_search)

    p = sub.add_parser("importance", help="selection-layer feature importances")
    p.add_argument("checkpoint")
    _add_common(p)
    p.set_defaults(fn=_cmd_importance)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - single-line diagnostic contract
        print(f"repmatch {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
