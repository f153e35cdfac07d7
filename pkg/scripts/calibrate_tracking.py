"""Train the tracking fixture model once and report trained vs untrained OPE scores.

Reproduces the numbers stored in tests/fixtures/tracking_calibration.json.
The thresholds in that file were set from this run and are not updated here.

    python3 scripts/calibrate_tracking.py [--steps 1500] [--sequences 64] [--bench-seed 1000]
"""

import argparse
import json
import logging
import time

from drci import model as M
from drci import trainer as TR
from drci.data import GenConfig, generate_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--steps", type=int, default=1500)
    ap.add_argument("--sequences", type=int, default=64)
    ap.add_argument("--rho", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--bench-seed", type=int, default=1000)
    ap.add_argument("--checkpoint", help="optional path for the trained model")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = TR.TrainConfig(steps=args.steps, n_sequences=args.sequences, rho=args.rho, seed=args.seed)
    easy = GenConfig(speed=1.0, illumination_drift=0.005)
    bench = generate_benchmark(20, 40, easy, seed=args.bench_seed)

    t0 = time.perf_counter()
    params, _ = TR.fit(cfg)
    train_s = time.perf_counter() - t0
    if args.checkpoint:
        M.save_checkpoint(args.checkpoint, params)
    trained = TR.evaluate_params(params, bench)
    untrained = TR.evaluate_params(M.init_params(cfg.net_cfg, cfg.seed), bench)
    print(json.dumps({
        "trained": {"precision20": trained.precision20, "auc": trained.auc, "fps": trained.fps},
        "untrained": {"precision20": untrained.precision20, "auc": untrained.auc},
        "train_seconds": round(train_s),
    }, indent=2))


if __name__ == "__main__":
    main()
