"""Command-line entry point.

    speclab <experiment> --config <path> [--out <dir>] [--seed <u64>] [--threads <k>]

Exit codes: 0 all verdicts pass, 1 at least one verdict failed, 2 invalid
configuration, 3 numerical failure (partial report written), 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError, SpeclabError
from .harness import EXPERIMENTS, ExperimentRunError, run_experiment

EXIT_OK = 0
EXIT_VERDICT_FAIL = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="speclab", description=__doc__)
    parser.add_argument("experiment", choices=EXPERIMENTS, help="experiment to run")
    parser.add_argument("--config", required=True, help="path to the JSON config file")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    parser.add_argument("--threads", type=int, default=1, help="parallel sweep cells")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        with open(args.config, "r", encoding="utf-8") as handle:
            raw = json.load(handle)
    except OSError as exc:
        print(f"speclab: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        print(f"speclab: config is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if not isinstance(raw, dict):
        print("speclab: config top level must be an object", file=sys.stderr)
        return EXIT_CONFIG
    if raw.get("experiment") not in (None, args.experiment):
        print(
            f"speclab: config experiment {raw.get('experiment')!r} does not match "
            f"CLI experiment {args.experiment!r}",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    raw = dict(raw)
    raw["experiment"] = args.experiment
    if args.seed is not None:
        raw["seed"] = args.seed

    try:
        report = run_experiment(raw, out_dir=args.out, threads=args.threads)
    except ConfigError as exc:
        print(f"speclab: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExperimentRunError as exc:
        print(f"speclab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"speclab: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except SpeclabError as exc:
        print(f"speclab: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    failed = [v["name"] for v in report["verdicts"] if not v["passed"]]
    for verdict in report["verdicts"]:
        status = "PASS" if verdict["passed"] else "FAIL"
        print(f"[{status}] {verdict['name']}: {verdict['inequality']}")
    if failed:
        print(f"speclab: {len(failed)} verdict(s) failed", file=sys.stderr)
        return EXIT_VERDICT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
