"""Command-line experiment runner.

Usage: gaitforge <experiment> --config <file> [--seed-base N] [--out DIR]
[--noise on|off].  Exit codes: 0 success, 2 configuration error,
3 evaluator fault.
"""

from __future__ import annotations

import argparse
import sys

from . import bayesopt, experiments


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaitforge",
        description="Gait-learning experiments on the surrogate hexapod.",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in experiments.EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="YAML config file (or a previous manifest.json)")
        p.add_argument("--seed-base", type=int, default=0, help="offset added to every seed")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--noise", choices=("on", "off"), help="override observation noise")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            cfg = experiments.load_config(args.config)
            if cfg.experiment != args.experiment:
                raise experiments.ConfigError(
                    [f"config is for {cfg.experiment!r}, not {args.experiment!r}"]
                )
        else:
            cfg = experiments.ExperimentConfig(experiment=args.experiment)
        if args.out:
            cfg.out_dir = args.out
        if args.noise:
            cfg.noise = args.noise == "on"
        if args.seed_base:
            cfg = cfg.normalized()
            cfg.seeds = [s + args.seed_base for s in cfg.seeds]
        summary = experiments.run_experiment(cfg)
    except experiments.ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return 2
    except bayesopt.EvaluatorError as exc:
        print(f"evaluator fault: {exc} ({len(exc.history)} evaluations kept)", file=sys.stderr)
        return 3
    print(f"done: results in {cfg.out_dir}")
    for key, value in summary.items():
        if key != "runs":
            print(f"  {key}: {value}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
