#!/usr/bin/env python3
"""Regenerate the golden outputs under tests/golden/offline.

Runs the full offline experiment (configs/offline.yaml) into the golden
folder, replacing what was there. Review the diff before committing: the
replay test treats these files as the expected bytes.

    python scripts/regen_golden.py
"""

import shutil
import sys
from pathlib import Path

from finagents.experiment import ExperimentConfig, run_experiment

ROOT = Path(__file__).resolve().parent.parent
GOLDEN = ROOT / "tests" / "golden" / "offline"


def main() -> int:
    cfg = ExperimentConfig.load(ROOT / "configs" / "offline.yaml")
    cfg.output_dir = str(GOLDEN)
    if GOLDEN.exists():
        shutil.rmtree(GOLDEN)
    manifest = run_experiment(cfg)
    n = sum(1 for p in GOLDEN.rglob("*") if p.is_file())
    print(f"wrote {n} files for {len(manifest.cells)} cells to {GOLDEN.relative_to(ROOT)}")
    return 0 if manifest.all_completed else 1


if __name__ == "__main__":
    sys.exit(main())
