"""Three-arm semi-supervised ablation on the toy benchmark.

    python scripts/run_ssl_ablation.py --seeds 0 1 2 --out runs/ssl_ablation

Prints per-seed avg mAP for full (pre-train + pseudo labels), pl (pseudo
labels from scratch) and lab (labeled only), then the medians.
"""
import argparse
import json
import logging
from pathlib import Path

import torch

from spot.config import load_config, preset
from spot.experiments import ARMS, load_benchmark, medians, ssl_arms


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--preset", default="toy")
    ap.add_argument("--config", default=None)
    ap.add_argument("--arms", nargs="+", default=list(ARMS), choices=ARMS)
    ap.add_argument("--out", default="runs/ssl_ablation")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    torch.set_num_threads(1)

    cfg = load_config(args.config, preset(args.preset)) if args.config else preset(args.preset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    runs = []
    for seed in args.seeds:
        run = ssl_arms(cfg, seed, load_benchmark(cfg, seed, out / f"seed_{seed}"), tuple(args.arms))
        runs.append(run)
        print(f"seed {seed}: " + "  ".join(f"{a} {v:.4f}" for a, v in run.mAP.items()) + f"  ({run.seconds:.0f}s)")
    med = medians(runs)
    print("median: " + "  ".join(f"{a} {v:.4f}" for a, v in med.items()))
    (out / "results.json").write_text(json.dumps({"per_seed": {r.seed: r.mAP for r in runs}, "median": med}, indent=2))


if __name__ == "__main__":
    main()
