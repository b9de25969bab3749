#!/usr/bin/env python3
"""Run the full verification suite over every config in a directory.

Thin orchestration over the CLI layer: one output directory per config,
summary line per run, nonzero exit if anything failed.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from affineflow.cli import cmd_verify
from affineflow.config import load_config


def main():
    ap = argparse.ArgumentParser(description="Verify every config in a directory")
    ap.add_argument("--configs", default="configs", help="directory of .cfg files")
    ap.add_argument("--out", default="runs/verify_all", help="output root")
    ap.add_argument("--seed", type=int, default=None, help="override sim.seed")
    args = ap.parse_args()

    cfg_paths = sorted(Path(args.configs).glob("*.cfg"))
    if not cfg_paths:
        print(f"no .cfg files under {args.configs}", file=sys.stderr)
        return 2

    worst = 0
    for path in cfg_paths:
        cfg = load_config(path)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        cfg = cfg.with_out_dir(str(Path(args.out) / path.stem))
        print(f"=== {path.stem} (model {cfg.model_name}) ===")
        code = cmd_verify(cfg)
        worst = max(worst, code)
    print(f"worst exit code: {worst}")
    return worst


if __name__ == "__main__":
    sys.exit(main())
