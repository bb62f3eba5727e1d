"""Guided vs unguided fitting along one axis (MC samples, dropout rate or acceleration).

Writes plot-ready rows to OUT/sweep_<axis>.csv.

    python3 scripts/run_sweep.py --axis dropout --out runs/sweep
"""

import argparse
import logging
from pathlib import Path

from puq.harness.config import ExperimentConfig, preset_config
from puq.harness.pipeline import SWEEP_AXES, run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    ap.add_argument("--config", type=Path)
    ap.add_argument("--preset", choices=("desk", "paper"), default="desk")
    ap.add_argument("--repeats", type=int, default=1)
    ap.add_argument("--grid", type=float, nargs="+", help="override the preset grid")
    ap.add_argument("--out", type=Path, default=Path("runs/sweep"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = ExperimentConfig.load(args.config) if args.config else preset_config(args.preset)
    cfg = cfg.replace(repeats=args.repeats, seeds=None)
    rows = run_sweep(cfg, args.axis, args.out, grid=args.grid)
    print(f"{'value':>8} {'variant':<6} {'seed':>4} {'NRMSE':>8} {'SSIM':>8}")
    for r in rows:
        print(f"{r['value']:>8g} {r['variant']:<6} {r['seed']:>4} {r['nrmse']:>8.4f} {r['ssim']:>8.4f}")


if __name__ == "__main__":
    main()
