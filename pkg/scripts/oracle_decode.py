"""Decode ground-truth class and mask matrices of the toy test split and score them.

    python scripts/oracle_decode.py --seed 0
"""
import argparse
import tempfile

import numpy as np

from spot.config import preset
from spot.decode import detect
from spot.evaluation import format_report, map_report
from spot.experiments import load_benchmark
from spot.inference import ground_truth


def oracle_P(class_label: np.ndarray, K: int) -> np.ndarray:
    P = np.zeros((K + 1, len(class_label)))
    P[class_label, np.arange(len(class_label))] = 1.0
    return P


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = preset("toy")
    K = cfg.data.num_classes
    with tempfile.TemporaryDirectory() as tmp:
        bench = load_benchmark(cfg, args.seed, tmp)
    dets = {s.id: detect(oracle_P(s.targets.class_label, K), s.targets.gt_mask, s.duration, cfg.decode) for s in bench.test}
    print(format_report(map_report(dets, ground_truth(bench.test), cfg.eval), "oracle decode"))


if __name__ == "__main__":
    main()
