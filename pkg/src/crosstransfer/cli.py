"""Command line front end: generate | train | ablate | report.

Exit codes: 0 on success, 2 for usage problems (argparse), 1 for runtime
failures, each with a one-line diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .datagen import generate_world, sample_window, write_records
from .harness import (SUITES, config_reference, load_config, render_aggregates,
                      render_rows, run_suite)
from .metrics import emit, emit_timings, read_metrics
from .trainer import run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crosstransfer",
        description="Cross-domain continual transfer experiments on synthetic two-domain data",
    )
    parser.add_argument("--config-fields", action="store_true",
                        help="print the generated configuration reference and exit")
    sub = parser.add_subparsers(dest="command")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="yaml config path")
    common.add_argument("--seed", type=int, default=None, help="override the first seed")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="dotted config override, e.g. train.alpha=0.25")

    g = sub.add_parser("generate", parents=[common], help="write synthetic dataset windows")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--windows", type=int, default=None,
                   help="number of windows (default: train.window_count + 1)")

    t = sub.add_parser("train", parents=[common], help="run one experiment")
    t.add_argument("--out", required=True, help="output directory for metrics files")
    t.add_argument("--name", default=None, help="experiment name override")

    a = sub.add_parser("ablate", parents=[common], help="run an experiment suite")
    a.add_argument("--suite", required=True, choices=SUITES)
    a.add_argument("--out", required=True, help="output directory for metrics files")

    r = sub.add_parser("report", help="render an emitted metrics file as a table")
    r.add_argument("--metrics", required=True, help="metrics csv or json path")
    return parser


def _cmd_generate(args) -> int:
    data_cfg, train_cfg, exp = load_config(args.config, args.overrides)
    seed = args.seed if args.seed is not None else exp["seeds"][0]
    n_windows = args.windows if args.windows is not None else train_cfg.window_count + 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world = generate_world(data_cfg, seed)
    for w in range(n_windows):
        win = sample_window(world, w)
        write_records(out / f"source_w{w}.tsv", win.source_records)
        write_records(out / f"target_w{w}.tsv", win.target_records)
    print(f"wrote {2 * n_windows} record files to {out}")
    return 0


def _cmd_train(args) -> int:
    data_cfg, train_cfg, exp = load_config(args.config, args.overrides)
    seed = args.seed if args.seed is not None else exp["seeds"][0]
    name = args.name or exp["name"]
    rows = run_experiment(data_cfg, train_cfg, seed, name=name)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit(rows, out / "metrics.csv", "csv")
    emit(rows, out / "metrics.json", "json")
    emit_timings(rows, out / "timings.csv")
    print(render_rows(rows))
    return 0


def _cmd_ablate(args) -> int:
    data_cfg, train_cfg, exp = load_config(args.config, args.overrides)
    seeds = [args.seed] if args.seed is not None else list(exp["seeds"])
    rows, aggs = run_suite(args.suite, data_cfg, train_cfg, seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit(rows, out / "metrics.csv", "csv")
    emit(rows, out / "metrics.json", "json")
    emit_timings(rows, out / "timings.csv")
    with open(out / "aggregates.csv", "w", encoding="utf-8") as fh:
        fh.write("experiment,checkpoint,mean_auc,stderr_auc,n_seeds\n")
        for a in aggs:
            fh.write(f"{a.experiment},{a.checkpoint},{a.mean_auc:.17g},"
                     f"{a.stderr_auc:.17g},{a.n_seeds}\n")
    print(render_rows(rows))
    print()
    print(render_aggregates(aggs))
    return 0


def _cmd_report(args) -> int:
    rows = read_metrics(args.metrics)
    print(render_rows(rows))
    from .harness import aggregate
    aggs = aggregate(rows)
    if any(a.n_seeds > 1 for a in aggs):
        print()
        print(render_aggregates(aggs))
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "ablate": _cmd_ablate,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config_fields:
        print(config_reference())
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        print("crosstransfer: error: a subcommand is required", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:
        print(f"crosstransfer: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
