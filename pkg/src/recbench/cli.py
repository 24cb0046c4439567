"""Command-line front end.

Exit codes: 0 success, 2 usage/config error (nothing written), 1 runtime
failure (partial logs are kept).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import SCHEMA_HELP, ExperimentConfig
from .dataio import FORMATS, binarize, build_dataset, load_interactions
from .errors import ConfigError, RecBenchError, UnknownParam
from .runner import (LOG_NAME, export_trace, read_log, report_from_log, report_table,
                     run_experiment, trace_csv)

USAGE_ERROR = 2
RUNTIME_ERROR = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="recbench", description="Tune and evaluate top-N recommenders.",
                     epilog=SCHEMA_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="binarize and index a raw interaction file",
                       epilog=SCHEMA_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("input", type=Path)
    p.add_argument("--format", choices=FORMATS, default="generic-tsv")
    p.add_argument("--mode", choices=("implicit", "explicit"), default="implicit")
    p.add_argument("--threshold", type=float, default=4.0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("run", help="run an experiment config",
                       epilog=SCHEMA_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("config_path", type=Path)
    p.add_argument("--out-dir", type=Path, required=True)

    p = sub.add_parser("report", help="rebuild result tables from trial logs")
    p.add_argument("results_dir", type=Path)
    p.add_argument("--metric", choices=("hr", "ndcg"))
    p.add_argument("--cutoff", type=int)

    p = sub.add_parser("trace", help="export one hyperparameter's search trajectory as CSV")
    p.add_argument("results_dir", type=Path)
    p.add_argument("--param", required=True)
    p.add_argument("--round", type=int)
    p.add_argument("--out", type=Path, required=True)
    return parser


def _find_logs(results_dir: Path) -> list[Path]:
    if not results_dir.is_dir():
        return []
    return sorted(results_dir.rglob(LOG_NAME))


def _prepare(args) -> int:
    if not args.input.is_file():
        raise ConfigError(f"input file not found: {args.input}")
    dataset = build_dataset(binarize(load_interactions(args.input, args.format),
                                     args.threshold, args.mode))
    args.out.mkdir(parents=True, exist_ok=True)
    dataset.to_tsv(args.out / "interactions.tsv")
    stats = dataset.stats()
    (args.out / "dataset.json").write_text(json.dumps(
        {**stats, "source": str(args.input), "format": args.format, "mode": args.mode,
         "threshold": args.threshold, "fingerprint": dataset.fingerprint}, indent=2) + "\n")
    print(f"{stats['users']} users, {stats['items']} items, {stats['interactions']} interactions")
    return 0


def _run(args) -> int:
    cfg = ExperimentConfig.load(args.config_path)
    if not cfg.dataset.path.is_file():
        raise ConfigError(f"dataset file not found: {cfg.dataset.path}")
    report = run_experiment(cfg, args.out_dir)
    sys.stdout.write(report_table([report]))
    return 0


def _report(args) -> int:
    logs = _find_logs(args.results_dir)
    if not logs:
        raise ConfigError(f"no trial logs found under {args.results_dir}")
    records = [rec for path in logs for rec in read_log(path)]
    sys.stdout.write(report_table(report_from_log(records), args.metric, args.cutoff))
    return 0


def _trace(args) -> int:
    logs = _find_logs(args.results_dir)
    if not logs:
        raise ConfigError(f"no trial logs found under {args.results_dir}")
    if len(logs) > 1:
        raise ConfigError(f"{len(logs)} trial logs under {args.results_dir}; point at one run directory")
    try:
        rows = export_trace(read_log(logs[0]), args.param, args.round)
    except UnknownParam as exc:
        raise ConfigError(str(exc)) from None
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(trace_csv(rows))
    return 0


COMMANDS = {"prepare": _prepare, "run": _run, "report": _report, "trace": _trace}


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"recbench: error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"recbench: error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except RecBenchError as exc:
        print(f"recbench: failed: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


def main() -> None:
    sys.exit(dispatch())
