"""Command-line interface.

Subcommands mirror a study's workflow: ``resources`` prints the
parameter/MAC accounting, ``train`` fits one model from a config file,
``evaluate`` runs the cross-validated variant comparison, ``ablate-lambda``
sweeps the reversal strength, ``export-features`` dumps penultimate features
for a trained checkpoint, and ``embed`` projects an exported feature CSV to
2-D. Every file output is UTF-8 CSV with a header row, except the binary
model checkpoint.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .datasets import build_desk_dataset, corrupt_test_fold
from .evaluate import _cell_seed, lambda_sweep, make_folds, run_experiment
from .models import (build_sepconv, build_stdconv, count_macs, count_params,
                     format_resource_table, reduction_ratio, resource_table,
                     write_resource_csv)
from .reporting import (emit_plot_data, export_features, pca2d,
                        read_feature_csv, tsne2d)
from .training import (DataBundle, TrainConfig, load_checkpoint,
                       save_checkpoint, train, write_training_log)

_ARCHES = {"sepconv": build_sepconv, "stdconv": build_stdconv}


def _desk(config: ExperimentConfig):
    return build_desk_dataset(config.seed, config.per_class_source,
                              config.per_class_target, config.duration)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_resources(args) -> int:
    names = list(_ARCHES) if args.arch == "both" else [args.arch]
    totals = {}
    for name in names:
        spec = _ARCHES[name](domain_head=args.domain_head)
        rows = resource_table(spec)
        print(f"{name} (input {spec.input_shape[0]}x{spec.input_shape[1]})")
        print(format_resource_table(rows))
        totals[name] = (count_params(spec), count_macs(spec))
        print(f"totals: params={totals[name][0]}  conv MACs={totals[name][1]}")
        print()
        if args.out_dir is not None:
            out = Path(args.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            path = out / f"resources_{name}.csv"
            write_resource_csv(path, rows)
            print(f"wrote {path}")
            print()
    if len(names) == 2:
        p_small, m_small = totals["sepconv"]
        p_large, m_large = totals["stdconv"]
        print(f"parameter reduction: {100 * reduction_ratio(p_small, p_large):.2f}%")
        print(f"conv MAC reduction:  {100 * reduction_ratio(m_small, m_large):.2f}%")
    return 0


def _cmd_train(args) -> int:
    config = load_config(args.config)
    desk = _desk(config)
    if args.variant in ("dat", "mmd"):
        target = desk.target_unlabeled()
    else:
        target = desk.target
    bundle = DataBundle(source=desk.source, target=target,
                        eval_source=desk.source, eval_target=desk.target)
    base = None
    if args.variant == "ft":
        if args.base is None:
            raise ValueError("variant ft fine-tunes an existing model; "
                             "pass --base CHECKPOINT")
        base, _ = load_checkpoint(args.base)
    tc = TrainConfig(args.variant, seed=config.seed, epochs=config.epochs,
                     batch_source=config.batch_source,
                     batch_target=config.batch_target, lr=config.lr,
                     grl_lambda=config.grl_lambda,
                     mmd_weight=config.mmd_weight,
                     eval_every=args.eval_every)
    result = train(tc, bundle, base=base)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.ckpt"
    log = out / "training_log.csv"
    save_checkpoint(ckpt, result.model)
    write_training_log(log, result.history)
    last = result.history[-1]
    print(f"trained {args.variant} for {config.epochs} epochs "
          f"(final label loss {last.label_loss:.4f})")
    if np.isfinite(last.source_uar):
        print(f"final source UAR {last.source_uar:.4f}  "
              f"target UAR {last.target_uar:.4f}")
    print(f"wrote {ckpt}")
    print(f"wrote {log}")
    return 0


def _cmd_evaluate(args) -> int:
    config = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = run_experiment(config, out_dir=out, log=print)
    print()
    print(f"{'variant':<10}{'domain':<8}{'health':>8}{'neoplasm':>10}"
          f"{'structural':>12}{'uar':>8}")
    for variant, rep in report.reports.items():
        for domain in ("source", "target"):
            r = rep.recalls[domain]
            print(f"{variant:<10}{domain:<8}{r[0]:>8.4f}{r[1]:>10.4f}"
                  f"{r[2]:>12.4f}{rep.uar[domain]:>8.4f}")
    for variant, ps in report.significance.items():
        print(f"{variant} vs dat: p_source={ps['source']:.4g} "
              f"p_target={ps['target']:.4g}")
    print(f"wrote {out / 'table1.csv'}")
    print(f"wrote {out / 'significance.csv'}")
    return 0


def _cmd_ablate_lambda(args) -> int:
    config = load_config(args.config)
    values = [float(v) for v in args.values.split(",") if v.strip()]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sweep = lambda_sweep(config, values, args.trials, out_dir=out, log=print)
    print()
    for lam, scores in sweep.items():
        med_s = float(np.median(scores["source"]))
        med_t = float(np.median(scores["target"]))
        print(f"lambda={lam:g}: median source UAR {med_s:.4f}, "
              f"median target UAR {med_t:.4f}")
    print(f"wrote {out / 'lambda_box.csv'}")
    return 0


def _cmd_export_features(args) -> int:
    config = load_config(args.config)
    model, _ = load_checkpoint(args.checkpoint)
    desk = _desk(config)
    plans = make_folds(desk.source.ids, folds=config.folds,
                       repeats=config.repeats, seed=config.seed,
                       labels=desk.source.labels)
    wanted = [p for p in plans if p.repeat == args.repeat and p.fold == args.fold]
    if not wanted:
        raise ValueError(f"no fold plan for repeat {args.repeat} "
                         f"fold {args.fold} under this config")
    plan = wanted[0]
    clean = desk.source.by_ids(plan.test_ids)
    # same corruption seed the evaluation harness uses for this cell
    noisy = corrupt_test_fold(clean, desk.bank,
                              seed=_cell_seed(config.seed, plan.repeat, plan.fold))
    dump = export_features(model, (clean, noisy), path=args.out)
    print(f"wrote {args.out} ({len(dump)} rows: {len(clean)} samples "
          f"x 2 domain conditions)")
    return 0


def _cmd_embed(args) -> int:
    dump = read_feature_csv(args.features)
    if args.method == "tsne":
        coords, trace = tsne2d(dump.features, perplexity=args.perplexity,
                               iterations=args.iterations, seed=args.seed)
        print(f"t-SNE KL: initial {trace[0]:.4f} -> final {trace[-1]:.4f}")
    else:
        coords = pca2d(dump.features)
    emit_plot_data("tsne", {"dump": dump, "coords": coords}, args.out)
    print(f"wrote {args.out} ({len(dump)} points)")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voicedat",
        description="compact noise-robust voice disorder classification")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("resources",
                       help="per-layer parameter and MAC accounting")
    p.add_argument("--arch", choices=("sepconv", "stdconv", "both"),
                   default="both")
    p.add_argument("--domain-head", action="store_true",
                   help="include the domain head in the accounting")
    p.add_argument("--out-dir", default=None,
                   help="also write resources_<arch>.csv here")
    p.set_defaults(func=_cmd_resources)

    p = sub.add_parser("train", help="train one model from a config file")
    p.add_argument("config", help="experiment config (key=value lines)")
    p.add_argument("--variant", default="dat",
                   choices=("stdconv", "sepconv", "tgt", "ft", "jnt", "mmd", "dat"))
    p.add_argument("--base", default=None,
                   help="checkpoint to fine-tune (variant ft)")
    p.add_argument("--eval-every", type=int, default=1,
                   help="epochs between UAR measurements (0 disables)")
    p.add_argument("--out", default="run",
                   help="directory for model.ckpt and training_log.csv")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate",
                       help="cross-validated variant comparison")
    p.add_argument("config")
    p.add_argument("--out", default="run",
                   help="directory for table1.csv and significance.csv")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("ablate-lambda",
                       help="sweep the gradient-reversal weight")
    p.add_argument("config")
    p.add_argument("--values", default="0,0.1,0.5,1,10",
                   help="comma-separated lambda values")
    p.add_argument("--trials", type=int, default=20,
                   help="random restarts per lambda")
    p.add_argument("--out", default="run", help="directory for lambda_box.csv")
    p.set_defaults(func=_cmd_ablate_lambda)

    p = sub.add_parser("export-features",
                       help="dump penultimate features for one test fold")
    p.add_argument("checkpoint")
    p.add_argument("config")
    p.add_argument("--repeat", type=int, default=1)
    p.add_argument("--fold", type=int, default=1)
    p.add_argument("--out", default="features.csv")
    p.set_defaults(func=_cmd_export_features)

    p = sub.add_parser("embed", help="project a feature CSV to 2-D")
    p.add_argument("features", help="CSV from export-features")
    p.add_argument("--method", choices=("tsne", "pca"), default="tsne")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="embedding.csv")
    p.set_defaults(func=_cmd_embed)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
