#!/usr/bin/env python3
"""Ablation on a synthetic severity-labelled set: full model vs. f+c+a vs. f.

Prints one line per modality set with held-out SRCC/LCC and wall time.
"""

import argparse
import json
import logging

from teleqa.config import FusionConfig, load_config
from teleqa.pipeline import evaluate_ablation
from teleqa.stream_io import severity_dataset

ABLATIONS = (("p", "f", "c", "a"), ("f", "c", "a"), ("f",))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    ap.add_argument("--n", type=int, default=200, help="number of streams")
    ap.add_argument("--seed", type=int, default=0, help="dataset seed")
    ap.add_argument("--split-seed", type=int, default=0)
    ap.add_argument("--config", default=None, help="JSON config file")
    ap.add_argument("--local", action="store_true", help="confine video distortions to random rectangles")
    ap.add_argument("--json", default=None, help="also write results here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    config = load_config(args.config)
    streams, mos, _ = severity_dataset(args.n, seed=args.seed, local=args.local, mos_fusion=FusionConfig().coeffs)
    results = evaluate_ablation(streams, mos, config, ABLATIONS, split_seed=args.split_seed)
    for name, r in results.items():
        print(f"{name:5s} srcc {r['srcc']:.4f}  lcc {r['lcc']:.4f}  {r['seconds']:.0f}s")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
