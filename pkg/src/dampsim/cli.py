"""Command-line entry points: run experiments, verify properties, time runs."""

import argparse
import json
import os
import sys

from . import backend, harness, verify


def _add_run_parser(subparsers):
    p = subparsers.add_parser("run", help="run a Monte-Carlo experiment")
    p.add_argument("--config", required=True, help="experiment JSON file")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)


def _add_verify_parser(subparsers):
    p = subparsers.add_parser("verify", help="run a property suite")
    p.add_argument("--suite", required=True,
                   help="suite name or 'all' (see dampsim.verify.SUITES)")
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.add_argument("--full", action="store_true",
                   help="acceptance-grade sample budgets (slower)")


def _add_timing_parser(subparsers):
    p = subparsers.add_parser("timing",
                              help="single-worker runtime measurement")
    p.add_argument("--config", required=True, help="experiment JSON file")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--trials", type=int, default=10)


def _load_experiment(args):
    config = harness.ExperimentConfig.from_json_file(args.config)
    overrides = {}
    if args.out is not None:
        overrides["output_dir"] = args.out
    if getattr(args, "trials", None) is not None:
        overrides["trials"] = args.trials
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if overrides:
        from dataclasses import replace
        config = replace(config, **overrides)
    return config


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="dampsim",
        description="Distributed AMP activity detection simulator "
                    f"(kernel backend: {backend.backend_name()})")
    subparsers = parser.add_subparsers(dest="command", required=True)
    _add_run_parser(subparsers)
    _add_verify_parser(subparsers)
    _add_timing_parser(subparsers)
    args = parser.parse_args(argv)

    if args.command == "run":
        config = _load_experiment(args)
        try:
            manifest = harness.run_experiment(config)
        except harness.ExperimentError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"wrote llr.csv, roc.csv, timing.csv, manifest.json to "
              f"{config.output_dir} ({manifest['trials_completed']}/"
              f"{manifest['trials_requested']} trials)")
        return 0

    if args.command == "verify":
        try:
            report = verify.run_property_suite(args.suite, full=args.full)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        text = json.dumps(report, indent=2, sort_keys=True)
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(text + "\n")
        print(text)
        for suite in report["suites"]:
            for check in suite["checks"]:
                status = "PASS" if check["passed"] else "FAIL"
                print(f"{status} {suite['name']}.{check['name']}: "
                      f"observed={check['observed']:.3g} "
                      f"bound={check['bound']:.3g}", file=sys.stderr)
        return 0 if report["all_passed"] else 1

    if args.command == "timing":
        config = _load_experiment(args)
        rows = harness.measure_runtime(config, trials=args.trials)
        out_dir = args.out or config.output_dir
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "timing.csv")
        harness.write_timing_rows(path, rows)
        print(f"wrote {path} ({len(rows)} rows)")
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
