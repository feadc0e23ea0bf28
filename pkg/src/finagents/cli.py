"""Command-line entry point: ``finagents --config configs/offline.yaml``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigError
from .experiment import ExperimentConfig, format_pct, read_records, run_experiment
from .tasks_eval import rank_decisions


def _csv(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="finagents", description="Run multi-agent financial research experiments.")
    p.add_argument("--config", required=True, help="experiment YAML file")
    p.add_argument("--structures", type=_csv, help="comma-separated structure labels (overrides config)")
    p.add_argument("--tickers", type=_csv, help="comma-separated tickers (overrides config)")
    p.add_argument("--offline", action="store_true", help="force the scripted backend and fixture data")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, help="seed for scripted variation and the hash embedder")
    p.add_argument("--workers", type=int, help="worker threads (default: one per ticker, max 8)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.structures:
            cfg.structures = args.structures
        if args.tickers:
            cfg.tickers = args.tickers
        if args.out:
            cfg.output_dir = args.out
        if args.seed is not None:
            cfg.seed = args.seed
        if args.workers is not None:
            cfg.workers = args.workers
        if args.offline:
            cfg.backend.kind = "scripted"
            cfg.live_data = False
        manifest = run_experiment(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    done = sum(c.status == "terminated" for c in manifest.cells)
    print(f"{done}/{len(manifest.cells)} cells completed; outputs in {cfg.output_dir}")
    for c in manifest.cells:
        if c.status != "terminated":
            print(f"  {c.ticker} {c.structure} {c.task}: {c.status} ({c.error})")
    records_file = Path(cfg.output_dir) / manifest.records_path
    ranking = rank_decisions(read_records(records_file)) if records_file.exists() else []
    if ranking:
        s, acc, diff = ranking[0]
        print(f"best decision structure: {s} (binary accuracy {format_pct(acc, 1)}, avg diff {format_pct(diff, 2)})")
    return 0 if manifest.all_completed else 1


if __name__ == "__main__":
    sys.exit(main())
