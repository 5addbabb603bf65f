"""Command-line entry point: one subcommand per scenario."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .harness import EXIT_VALIDATION, run

LOG_ENV = "SYMPGEOM_LOG_LEVEL"

COMMANDS = {
    "survey": "characteristic-survey",
    "viterbo": "viterbo-report",
    "polar": "polar-check",
    "john": "john-check",
    "billiard": "outer-billiard",
    "scan": "period-scan",
    "symp-check": "symplecticity-check",
    "paper-examples": "paper-examples",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sympgeom", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, scenario in COMMANDS.items():
        p = sub.add_parser(name, help=f"run the {scenario} scenario")
        p.add_argument("--config", help="JSON scenario configuration")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="master seed (overrides seed)")
        p.add_argument("--threads", type=int, help="worker threads (overrides threads)")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    scenario = COMMANDS[args.command]
    config = {}
    if args.config:
        try:
            with open(args.config) as fh:
                config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"cannot read config: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        if not isinstance(config, dict):
            print("config must be a JSON object", file=sys.stderr)
            return EXIT_VALIDATION
        if config.get("scenario", scenario) != scenario:
            print(f"config scenario {config['scenario']!r} does not match subcommand {args.command!r}",
                  file=sys.stderr)
            return EXIT_VALIDATION
    config["scenario"] = scenario
    for key, val in (("output_dir", args.out), ("seed", args.seed), ("threads", args.threads)):
        if val is not None:
            config[key] = val
    report = run(config)
    summary = {"status": report.status, "exit_code": report.exit_code,
               "artifacts": report.artifacts, "diagnostics": report.diagnostics}
    print(json.dumps(summary, indent=2), file=sys.stdout if report.exit_code == 0 else sys.stderr)
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
