"""Ablation table: every variant over repeated seeds, mean and sample std.

    python3 scripts/run_ablation.py --repeats 3 --baseline --out runs/ablation
"""

import argparse
import logging
from pathlib import Path

from puq.harness.config import ExperimentConfig, preset_config
from puq.harness.pipeline import run_ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", type=Path)
    ap.add_argument("--preset", choices=("desk", "paper"), default="desk")
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--sequences", nargs="+", choices=("T2prep", "MOLLI"))
    ap.add_argument("--baseline", action="store_true", help="add the zero-filled+LSQ row")
    ap.add_argument("--out", type=Path, default=Path("runs/ablation"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = ExperimentConfig.load(args.config) if args.config else preset_config(args.preset)
    cfg = cfg.replace(repeats=args.repeats, seeds=None)
    res = run_ablation(cfg, args.out, sequences=args.sequences, include_baseline=args.baseline)
    print(res.format())


if __name__ == "__main__":
    main()
