"""Command-line interface: experiment runs, config validation, oracle suite."""

from __future__ import annotations

import argparse
import sys

from .config_io import ConfigError, desk_config, load_spec, paper_config
from .experiments import (EXPERIMENTS, default_spec, emit_results,
                          run_experiment)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="riscomp",
        description="Computation-efficiency experiments for the RIS-aided "
                    "cooperative edge-computing simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment sweep")
    run.add_argument("--experiment", required=True, choices=EXPERIMENTS)
    run.add_argument("--config", help="TOML config (defaults to desk scale)")
    run.add_argument("--out", required=True, help="output CSV path")
    run.add_argument("--trials", type=int, help="override trial count")
    run.add_argument("--seed", type=int, help="override root seed")
    run.add_argument("--paper-scale", action="store_true",
                     help="use the full-scale literature parameter set")
    run.add_argument("--figures", dest="figures", action="store_true",
                     default=True, help="render figures (default)")
    run.add_argument("--no-figures", dest="figures", action="store_false")
    run.add_argument("--fig-dir", help="figure directory (default: alongside "
                                       "the CSV)")
    run.add_argument("--keep-volatile", action="store_true",
                     help="keep wall-clock metrics in the CSV (breaks "
                          "byte-for-byte determinism)")

    val = sub.add_parser("validate", help="validate a config file")
    val.add_argument("--config", required=True)

    osuite = sub.add_parser("oracle-suite",
                            help="run the derived-value oracle checks")
    osuite.add_argument("--out", required=True, help="pass/fail CSV path")
    return parser


def _cmd_run(args) -> int:
    if args.config:
        try:
            config, spec = load_spec(args.config, experiment=args.experiment,
                                     paper_scale=args.paper_scale)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        if spec is None or spec.experiment != args.experiment:
            spec = default_spec(args.experiment, config=config,
                                paper_scale=args.paper_scale)
    else:
        spec = default_spec(args.experiment, paper_scale=args.paper_scale)
    if args.trials is not None:
        if args.trials < 1:
            print("config error: trials must be >= 1", file=sys.stderr)
            return 2
        spec.trials = args.trials
    if args.seed is not None:
        spec.seed = args.seed

    table = run_experiment(spec)
    out_table = table if args.keep_volatile else table.drop_volatile()
    try:
        emit_results(out_table, args.out)
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return 1

    feasible = table.values("feasible")
    print(f"experiment {spec.experiment}: {spec.trials} trials x "
          f"{len(spec.grid)} sweep points x {len(spec.modes)} modes")
    if feasible.size:
        print(f"feasible runs: {int(feasible.sum())}/{feasible.size}")
    for mode in spec.modes:
        ce = table.values("ce", mode=mode)
        if ce.size:
            print(f"  mean CE [{mode}]: {ce.mean():.6g} bits/J over {ce.size} runs")
    print(f"results written to {args.out}")

    if args.figures:
        from .figures import render_figure
        import os
        fig_dir = args.fig_dir or (os.path.dirname(os.path.abspath(args.out))
                                   or ".")
        path = render_figure(table, spec.experiment, fig_dir)
        print(f"figure written to {path}")
    return 0


def _cmd_validate(args) -> int:
    try:
        config, spec = load_spec(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(f"config OK: N={config.n_aps} K={config.n_users} "
          f"L={config.n_antennas} M={config.n_elements}")
    if spec is not None:
        print(f"experiment {spec.experiment}: sweep {spec.sweep} over "
              f"{spec.grid}, {spec.trials} trials, modes {spec.modes}")
    return 0


def _cmd_oracle_suite(args) -> int:
    from .oracle_suite import run_all, write_table
    results = run_all()
    try:
        write_table(results, args.out)
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return 1
    failed = [r for r in results if not r.passed]
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    print(f"{len(results) - len(failed)}/{len(results)} checks passed; "
          f"table written to {args.out}")
    return 0 if not failed else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "validate":
        return _cmd_validate(args)
    if args.command == "oracle-suite":
        return _cmd_oracle_suite(args)
    return 2


if __name__ == "__main__":
    sys.exit(main())
