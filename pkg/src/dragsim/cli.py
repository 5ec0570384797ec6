"""Command line entry point: ``dragsim run`` and ``dragsim summarize``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .baselines import TooLarge
from .config import ConfigError
from .env import PlacementFailed
from .harness import AGENTS, load_spec, run_experiment, summarize


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dragsim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment spec")
    run.add_argument("--spec", required=True, help="experiment file (key = value lines)")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, help="master seed override")
    run.add_argument("--agent", choices=AGENTS, help="agent override")
    run.add_argument("--days", type=int, help="days per trace override")
    run.add_argument("--traces", type=int, help="trace count override")

    summ = sub.add_parser("summarize", help="summarise a finished run directory")
    summ.add_argument("--in", dest="indir", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            spec = load_spec(args.spec)
            for key in ("seed", "agent", "days", "traces"):
                value = getattr(args, key)
                if value is not None:
                    setattr(spec, key, value)
            result = run_experiment(spec, args.out)
            if not result["complete"]:
                print("walltime budget reached; rerun the same command to resume", file=sys.stderr)
                return 3
        else:
            result = summarize(args.indir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except PlacementFailed as exc:
        print(f"placement failed: {exc}", file=sys.stderr)
        return 2
    except TooLarge as exc:
        print(f"scenario too large: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True, indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
