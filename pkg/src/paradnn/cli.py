"""Command-line entry point: ``paradnn {generate,estimate,ingest,analyze,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import (ConfigError, RunRecord, SweepConfig, emit_reports, ingest_measurements,
                      read_results, run_sweep, write_results, write_roofline)
from .workload import builtin_grids, iter_grid

RESULTS = "results.csv"
ROOFLINE = "roofline.csv"
DEFAULT_PLATFORM = "tpu-v2"


def _config(args) -> SweepConfig:
    cfg = SweepConfig.load(args.config) if args.config else SweepConfig()
    if args.family:
        cfg.family = args.family
    if args.platform:
        cfg.platforms = args.platform
    if args.dtype:
        cfg.dtypes = args.dtype
    if args.out:
        cfg.out = args.out
    if getattr(args, "workers", None):
        cfg.workers = args.workers
    return cfg


def cmd_generate(args) -> dict:
    cfg = _config(args)
    grid = builtin_grids()[cfg.family].override(cfg.grid)
    n = 0
    for spec in iter_grid(grid, cfg.family, cfg.dtypes[0] if cfg.dtypes else None):
        if args.limit is not None and n >= args.limit:
            break
        print(spec.to_json())
        n += 1
    return {"specs": n}


def cmd_estimate(args) -> dict:
    cfg = _config(args)
    if not args.config and not args.platform:
        cfg.platforms = [DEFAULT_PLATFORM]
    record = run_sweep(cfg)
    out = Path(cfg.out)
    write_results(record.table, out / RESULTS)
    write_roofline(record.roofline, out / ROOFLINE)
    n_ok = sum(r.status == "ok" for r in record.table)
    return {"rows": len(record.table), "ok": n_ok, "oom": len(record.table) - n_ok,
            "results": str(out / RESULTS)}


def cmd_ingest(args) -> dict:
    cfg = _config(args)
    measured = ingest_measurements(args.csv)
    target = Path(cfg.out) / RESULTS
    table = read_results(target) if target.exists() else None
    merged = table.merge(measured) if table is not None else measured
    write_results(merged, target)
    return {"ingested": len(measured), "rows": len(merged), "results": str(target)}


def cmd_analyze(args) -> dict:
    cfg = _config(args)
    results = Path(args.results or Path(cfg.out) / RESULTS)
    table = read_results(results)
    requests = [r for r in cfg.requests if r["kind"] not in ("roofline", "scaling")]
    if not requests:
        raise ConfigError("no table analysis requests (heatmap, regression, speedup, percentile) in config")
    return emit_reports(RunRecord(table), requests, Path(cfg.out) / "analysis")


def cmd_report(args) -> dict:
    cfg = _config(args)
    if not cfg.requests:
        raise ConfigError("config has no report requests")
    record = run_sweep(cfg)
    out = Path(cfg.out)
    write_results(record.table, out / RESULTS)
    return emit_reports(record, cfg.requests, out / "reports")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="paradnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML or JSON sweep config")
        p.add_argument("--family", choices=("fc", "cnn", "rnn"))
        p.add_argument("--platform", action="append", help="platform name (repeatable)")
        p.add_argument("--dtype", action="append", help="dtype name (repeatable)")
        p.add_argument("--out", help="output directory")
        return p

    g = common(sub.add_parser("generate", help="print grid specs as JSON lines"))
    g.add_argument("--limit", type=int)
    g.set_defaults(func=cmd_generate)
    e = common(sub.add_parser("estimate", help="run the sweep and write results.csv"))
    e.add_argument("--workers", type=int)
    e.set_defaults(func=cmd_estimate)
    i = common(sub.add_parser("ingest", help="merge a measured-results CSV into results.csv"))
    i.add_argument("csv")
    i.set_defaults(func=cmd_ingest)
    a = common(sub.add_parser("analyze", help="regressions, speedups, percentiles over results.csv"))
    a.add_argument("--results", help="results CSV (default: <out>/results.csv)")
    a.set_defaults(func=cmd_analyze)
    r = common(sub.add_parser("report", help="run the sweep and emit figure data files"))
    r.add_argument("--workers", type=int)
    r.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        summary = args.func(args)
    except (ValueError, KeyError, OSError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 2
    if args.command != "generate":
        print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
