"""Ablation over the contrastive-loss weight, the Python-API twin of ``drci sweep-rho``.

    python3 scripts/rho_sweep.py --out runs/sweep --steps 300 --workers 1
"""

import argparse
import logging
from pathlib import Path

from drci import trainer as TR
from drci.data import GenConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--rho", type=float, nargs="+", default=list(TR.DEFAULT_RHO_GRID))
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--sequences", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--easy", action="store_true", help="slow, low-drift held-out benchmark")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = TR.TrainConfig(steps=args.steps, n_sequences=args.sequences, seed=args.seed)
    gen = GenConfig(speed=1.0, illumination_drift=0.005) if args.easy else GenConfig()
    rows = TR.sweep_rho(cfg, args.rho, TR.EvalBenchConfig(gen_cfg=gen), workers=args.workers)
    print(TR.write_sweep(args.out / "sweep.csv", rows).read_text(), end="")


if __name__ == "__main__":
    main()
