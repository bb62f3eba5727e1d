"""Run one variant end to end and print its metrics.

    python3 scripts/run_pipeline.py --variant PUQ --repeats 3 --out runs/puq
"""

import argparse
import logging
from pathlib import Path

from puq.harness.config import VARIANTS, ExperimentConfig, preset_config
from puq.harness.pipeline import run_pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", type=Path)
    ap.add_argument("--preset", choices=("desk", "paper"), default="desk")
    ap.add_argument("--variant", choices=VARIANTS)
    ap.add_argument("--repeats", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", type=Path, default=Path("runs/pipeline"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = ExperimentConfig.load(args.config) if args.config else preset_config(args.preset)
    changes = {k: v for k, v in (("variant", args.variant), ("repeats", args.repeats), ("seed", args.seed)) if v is not None}
    if "repeats" in changes or "seed" in changes:
        changes["seeds"] = None
    cfg = cfg.replace(**changes)
    for r in run_pipeline(cfg, args.out):
        print(f"{r.variant:<16} {r.param} R={r.R:g} seed={r.seed}  NRMSE={r.nrmse:.4f}  SSIM={r.ssim:.4f}  {r.seconds:.0f}s")


if __name__ == "__main__":
    main()
