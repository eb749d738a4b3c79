"""Command line entry point: ``ramu run | aggregate | compare``.

Exit codes: 0 success, 1 data error (aggregate/compare), 2 bad config or
arguments, 3 unwritable output.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..envs import ConfigError
from .config import load_config
from .report import RAW_FIELDS, SUMMARY_FIELDS, ReportError, aggregate, compare, format_table, read_csv, report_row, write_csv, write_rows
from .runner import OutputError, run_experiment

EXIT_DATA, EXIT_CONFIG, EXIT_OUTPUT = 1, 2, 3


def _seed_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ramu", description="Risk-averse model uncertainty experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train and evaluate one experiment config")
    p_run.add_argument("config", type=Path)
    p_run.add_argument("--out", type=Path, help="artifact directory (default: config 'output')")
    p_run.add_argument("--seed-override", type=_seed_list, metavar="S1,S2,...", help="replace the config's seed list")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel seed workers")

    p_agg = sub.add_parser("aggregate", help="summarize a raw.csv, optionally against a baseline raw.csv")
    p_agg.add_argument("raw", type=Path)
    p_agg.add_argument("--baseline", type=Path)
    p_agg.add_argument("--out", type=Path, help="write the summary CSV here instead of stdout")

    p_cmp = sub.add_parser("compare", help="rank summary CSVs by %% safe")
    p_cmp.add_argument("summaries", type=Path, nargs="+")
    p_cmp.add_argument("--out", type=Path, help="also write the ordered rows as CSV")
    return parser


def _write_or_print(path: Path | None, rows: list[dict]) -> None:
    if path is None:
        write_rows(sys.stdout, SUMMARY_FIELDS, rows)
        return
    try:
        write_csv(path, SUMMARY_FIELDS, rows)
    except OSError as exc:
        raise OutputError(f"{path}: {exc.strerror or exc}") from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "run":
            if args.jobs < 1:
                raise ConfigError("--jobs must be >= 1")
            cfg = load_config(args.config)
            if args.seed_override:
                cfg = cfg.with_seeds(args.seed_override)
            out = run_experiment(cfg, args.out, args.jobs)
            print(out)
        elif args.command == "aggregate":
            baseline = read_csv(args.baseline, RAW_FIELDS) if args.baseline else None
            report = aggregate(read_csv(args.raw, RAW_FIELDS), baseline)
            _write_or_print(args.out, [report_row(report)])
        else:
            rows = [row for path in args.summaries for row in read_csv(path, SUMMARY_FIELDS)]
            ordered = compare(rows)
            print(format_table(ordered))
            if args.out:
                _write_or_print(args.out, ordered)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OutputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OUTPUT
    except ReportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
