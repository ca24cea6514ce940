"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 pipeline
error. Argument-parsing failures exit 2 as well (argparse's native code,
and they are configuration mistakes in spirit).
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import __version__
from .config import load_config
from .errors import ConfigError, DataError, PipelineError, TTCastError
from .event_log import load_event_log, log_summary
from .features import ACTOR_TAG, BASELINE_TAG
from .pipeline import STAGE_ORDER, cmd_run, cmd_stage, make_context

_FEATURE_SET_CHOICES = {
    "baseline": (BASELINE_TAG,),
    "actor": (ACTOR_TAG,),
    "both": (BASELINE_TAG, ACTOR_TAG),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttcast",
        description=(
            "Forecast next-day mean throughput time from a business-process "
            "event log, with actor-behavior features."
        ),
    )
    parser.add_argument("--version", action="version", version=f"ttcast {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="path to the YAML run configuration")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="global seed (overrides the config)")
        p.add_argument(
            "--feature-set",
            choices=sorted(_FEATURE_SET_CHOICES),
            default="both",
            help="which feature sets to build and model (default: both)",
        )

    run_p = sub.add_parser("run", help="run the full pipeline and write all artifacts")
    add_common(run_p)

    stage_p = sub.add_parser("stage", help="run a single pipeline stage")
    stage_p.add_argument("name", choices=STAGE_ORDER, help="stage to run")
    add_common(stage_p)

    val_p = sub.add_parser("validate-config", help="check a configuration file and exit")
    val_p.add_argument("--config", required=True, help="path to the YAML run configuration")

    sum_p = sub.add_parser("summary", help="print summary statistics of an event log")
    sum_p.add_argument("log", help="path to a CSV or XES event log")
    sum_p.add_argument("--format", choices=("csv", "xes"), help="log format (default: sniffed)")
    sum_p.add_argument(
        "--config",
        help="reuse a run config's dataset options (column mapping, timestamp format)",
    )
    return parser


def _context_from_args(args: argparse.Namespace):
    config = load_config(args.config)
    if args.out:
        config = replace(config, output_dir=args.out)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return make_context(config, _FEATURE_SET_CHOICES[args.feature_set])


def _run(args: argparse.Namespace) -> int:
    ctx = _context_from_args(args)
    manifest = cmd_run(ctx)
    print(f"wrote {len(manifest['artifacts']) + 1} artifacts to {ctx.out_dir}")
    return 0


def _stage(args: argparse.Namespace) -> int:
    ctx = _context_from_args(args)
    cmd_stage(args.name, ctx)
    print(f"stage {args.name} complete; artifacts in {ctx.out_dir}")
    return 0


def _validate_config(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    print(f"config ok: dataset {config.dataset.path}, output {config.output_dir}")
    return 0


def _summary(args: argparse.Namespace) -> int:
    fmt = args.format
    options = {}
    if args.config:
        ds = load_config(args.config).dataset
        fmt = fmt or ds.format
        options = dict(
            mapping=ds.columns or None,
            ts_format=ds.timestamp_format or "auto",
            max_bad_row_fraction=ds.max_bad_row_fraction,
            naive_utc_offset_hours=ds.naive_utc_offset_hours,
        )
    log = load_event_log(args.log, fmt=fmt, **options)
    info = log_summary(log)
    span = log.span
    print(f"events:      {info.n_events}")
    print(f"cases:       {info.n_cases}")
    print(f"activities:  {info.n_activities}")
    print(f"resources:   {info.n_resources}")
    if span is not None:
        print(f"span:        {span[0].isoformat()} .. {span[1].isoformat()}")
    if log.ingest.rows_skipped:
        print(f"skipped:     {log.ingest.rows_skipped} rows")
    return 0


_HANDLERS = {
    "run": _run,
    "stage": _stage,
    "validate-config": _validate_config,
    "summary": _summary,
}


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except PipelineError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 4
    except TTCastError as exc:  # base-class fallback
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
