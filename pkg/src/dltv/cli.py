"""Command line: ``dltv run``, ``dltv summarize`` and ``dltv demo figure1``."""

import argparse
import json
import logging
import sys

import numpy as np

from . import harness


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="dltv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config and write records CSV")
    run.add_argument("config", help="INI experiment config")
    run.add_argument("--out", help="records CSV path (overrides config output)")
    run.add_argument("--runs", type=_positive_int)
    run.add_argument("--seed", type=int, help="base seed")
    run.add_argument("--horizon", type=_positive_int, help="steps (bandits) or episodes")
    run.add_argument("--jobs", type=_positive_int, default=1, help="worker processes")
    run.add_argument("--json", action="store_true", help="print the summary as JSON")

    summ = sub.add_parser("summarize", help="aggregate a records CSV")
    summ.add_argument("records")
    summ.add_argument("--json", action="store_true")
    summ.add_argument("--curves", help="write per-step mean curves to this CSV")

    demo = sub.add_parser("demo", help="built-in demonstrations")
    demo.add_argument("name", choices=["figure1"])
    demo.add_argument("--out", default="figure1.csv")
    demo.add_argument("--steps", type=_positive_int, default=20000)
    demo.add_argument("--seed", type=int, default=0)
    return parser


def _write_curves(summary, path):
    with open(path, "w") as fh:
        fh.write("agent,step,mean_reward,mean_cum_reward\n")
        for agent, c in summary["curves"].items():
            for step, r, cum in zip(c["step"], c["mean_reward"], c["mean_cum_reward"]):
                fh.write(f"{agent},{step},{r:.6f},{cum:.6f}\n")


def _cmd_run(args):
    config = harness.load_config(args.config)
    config = harness.with_overrides(config, output_path=args.out, runs=args.runs,
                                    base_seed=args.seed, horizon=args.horizon)
    if not config.output_path:
        raise harness.ConfigError("experiment.output: no output path (set it or pass --out)")
    _, summary = harness.run_experiment(config, jobs=args.jobs)
    if args.json:
        print(json.dumps(summary, indent=2, sort_keys=True))
    else:
        print(harness.format_summary(summary))
        print(f"records written to {config.output_path}")
    return 0


def _cmd_summarize(args):
    summary = harness.summarize(args.records)
    if args.curves:
        _write_curves(summary, args.curves)
    if args.json:
        print(json.dumps({"agents": summary["agents"]}, indent=2, sort_keys=True))
    else:
        print(harness.format_summary(summary))
    return 0


def _cmd_demo(args):
    harness.write_figure1_csv(args.out, n_steps=args.steps, seed=args.seed)
    for kind in ("degenerate", "stochastic"):
        _, thetas = harness.figure1_trajectory(kind, args.steps, args.seed)
        err = np.max(np.abs(np.sort(thetas[-1]) - harness.figure1_oracle(kind)))
        print(f"{kind}: max |theta - oracle| after {args.steps} steps = {err:.4f}")
    print(f"trajectories written to {args.out}")
    return 0


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "summarize": _cmd_summarize, "demo": _cmd_demo}[args.command]
    try:
        return handler(args)
    except (FileNotFoundError, harness.ConfigError, harness.RecordFormatError) as exc:
        print(f"dltv {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"dltv {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
