"""Command line entry point: ``d3rqn train | eval | report``.

Exit codes: 0 success, 2 configuration error, 3 runtime/numeric error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from d3rqn.errors import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="d3rqn", description="Recurrent Q-learning lab on a toy road world.")
    p.add_argument("-q", "--quiet", action="store_true", help="only print warnings and errors")
    # accepted after the subcommand too; SUPPRESS keeps it from resetting the top-level value
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-q", "--quiet", action="store_true", default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train an agent to the configured step budget")
    t.add_argument("--config", help="config file (flat dotted keys); defaults when omitted")
    t.add_argument("--seed", type=int, help="override run.seed")
    t.add_argument("--out", help="run directory (overrides run.out)")

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint over every start point")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--mode", choices=("train", "test"), default="test")
    e.add_argument("--trials", type=int, default=30, help="episodes per start point")
    e.add_argument("--policy", choices=("greedy", "random"), default="greedy",
                   help="'random' runs the uniform-random baseline under the same protocol")
    e.add_argument("--config", help="run config; defaults to config.txt in the checkpoint's run directory")
    e.add_argument("--out", help="output directory (default: <run>/eval_<mode>)")
    e.add_argument("--workers", type=int, default=1, help="worker processes, one start point each")

    r = sub.add_parser("report", parents=[common], help="render figures and CSV tables from run directories")
    r.add_argument("run_dirs", nargs="+")
    r.add_argument("--out", required=True)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "train":
            from d3rqn.harness.train import cmd_train
            run_dir = cmd_train(args.config, args.seed, args.out)
            print(run_dir)
        elif args.command == "eval":
            from d3rqn.harness.evaluate import cmd_eval
            report, out = cmd_eval(args.checkpoint, args.mode, args.trials, args.policy, args.out,
                                   args.config, args.workers)
            print((out / "eval_table.txt").read_text(), end="")
            print(out)
        else:
            from d3rqn.harness.report import cmd_report
            for path in cmd_report(args.run_dirs, args.out):
                print(path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # numeric failures and anything else unexpected
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
