"""GT-mask vs predicted-mask mAP for the parallel detector and a sequential skeleton.

    python scripts/run_error_propagation.py --seeds 0 1 2 --out runs/error_prop

The detector is trained with pre-training and pseudo labels; the sequential
skeleton reuses its masks as proposals and classifies each cropped span with
an MLP trained on the labeled videos.
"""
import argparse
import json
import logging
import statistics
from pathlib import Path

import torch

from spot.config import load_config, preset
from spot.experiments import format_error_table, run_seed


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--preset", default="toy")
    ap.add_argument("--config", default=None)
    ap.add_argument("--out", default="runs/error_prop")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    torch.set_num_threads(1)

    cfg = load_config(args.config, preset(args.preset)) if args.config else preset(args.preset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    rows = [run_seed(cfg, seed, out, arms=("full",))[1] for seed in args.seeds]
    print(format_error_table(rows))
    for name in ("parallel", "sequential"):
        med = statistics.median(r[name]["relative_drop"] for r in rows)
        print(f"median relative drop, {name}: {100 * med:.1f}%")
    (out / "results.json").write_text(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()
