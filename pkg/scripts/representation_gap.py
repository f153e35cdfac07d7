"""Intra- vs inter-sequence cosine similarity of the projected template embeddings.

Trains one model per rho on the same pool and prints the similarity gap and
the contrastive loss at the first and last step.

    python3 scripts/representation_gap.py --rho 0.0 0.1 0.5 --steps 300
"""

import argparse
import time
from dataclasses import replace

from drci import trainer as TR


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--rho", type=float, nargs="+", default=[0.0, 0.1])
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--sequences", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    base = TR.TrainConfig(steps=args.steps, n_sequences=args.sequences, seed=args.seed)
    pool = TR.training_pool(base)
    print("rho,intra,inter,gap,l_drl_first,l_drl_last,seconds")
    for rho in args.rho:
        t0 = time.perf_counter()
        params, records = TR.fit(replace(base, rho=rho), pool=pool)
        intra, inter = TR.embedding_similarity(params, pool)
        print(
            f"{rho},{intra:.4f},{inter:.4f},{intra - inter:.4f},"
            f"{records[0]['l_drl']:.4f},{records[-1]['l_drl']:.4f},{time.perf_counter() - t0:.0f}",
            flush=True,
        )


if __name__ == "__main__":
    main()
