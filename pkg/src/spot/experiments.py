"""Directional experiments on the synthetic benchmark.

``ssl_arms`` trains the three semi-supervised arms for one seed (pre-training
+ pseudo labels, pseudo labels from scratch, labeled only).
``error_propagation_experiment`` measures how much mAP a detector loses when
ground-truth masks are replaced by predicted ones, for the parallel detector
and for a sequential skeleton that classifies mask-cropped segments.
"""
from __future__ import annotations

import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .config import DecodeConfig, RunConfig
from .data import VideoSample, generate_synthetic, prepare, snippets_to_seconds
from .decode import ActionInstance, decode_instances, pick_run, soft_nms
from .evaluation import map_report
from .inference import ground_truth, predict
from .model import SPOT
from .pretrain import pretrain
from .semisup import finetune

log = logging.getLogger(__name__)

ARMS = ("full", "pl", "lab")


@dataclass
class Benchmark:
    labeled: list[VideoSample]
    unlabeled: list[VideoSample]
    test: list[VideoSample]
    classes: list[str]


def load_benchmark(cfg: RunConfig, seed: int, root) -> Benchmark:
    """Generate (or regenerate identically) the synthetic split for ``seed`` under ``root``."""
    split = generate_synthetic(cfg.data, seed, root)
    T, K = cfg.train.temporal_length, cfg.data.num_classes
    return Benchmark(
        prepare(split.labeled, root, T, K),
        prepare(split.unlabeled, root, T, K, with_targets=False),
        prepare(split.test, root, T, K),
        split.classes,
    )


@dataclass
class SeedRun:
    seed: int
    mAP: dict[str, float]
    models: dict[str, SPOT] = field(default_factory=dict)
    seconds: float = 0.0


def ssl_arms(cfg: RunConfig, seed: int, bench: Benchmark, arms=ARMS) -> SeedRun:
    """Train the requested arms on one seed and score them on the test split.

    ``full``: pre-train, then fine-tune with pseudo labels.
    ``pl``: fine-tune with pseudo labels from random init (``--from-scratch``).
    ``lab``: supervised training on the labeled videos only.
    """
    t0 = time.time()
    pre = None
    if "full" in arms:
        pre, _ = pretrain([s.features for s in bench.labeled + bench.unlabeled], cfg, seed)
    run = SeedRun(seed, {})
    for arm in arms:
        model, _ = finetune(
            bench.labeled, bench.unlabeled, cfg, seed,
            init=pre if arm == "full" else None,
            pseudo_labels=arm != "lab",
        )
        dets = {s.id: soft_nms(decode_instances(P, M, s.duration, cfg.decode), cfg.decode)
                for s, (P, M) in zip(bench.test, predict(model, bench.test))}
        run.mAP[arm] = map_report(dets, ground_truth(bench.test), cfg.eval)["average"]
        run.models[arm] = model
        log.info("seed %d arm %s mAP %.4f", seed, arm, run.mAP[arm])
    run.seconds = time.time() - t0
    return run


def medians(runs: list[SeedRun]) -> dict[str, float]:
    arms = runs[0].mAP.keys()
    return {a: statistics.median(r.mAP[a] for r in runs) for a in arms}


# ------------------------------------------------------------ error propagation


class CropClassifier(nn.Module):
    """Sequential skeleton's second stage: MLP on the mean-pooled features of a span."""

    def __init__(self, in_dim: int, num_classes: int, hidden: int = 64):
        super().__init__()
        self.num_classes = num_classes
        self.net = nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU(), nn.Linear(hidden, num_classes + 1))

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        return self.net(pooled)

    @torch.no_grad()
    def probs(self, features: np.ndarray, a: int, b: int) -> np.ndarray:
        pooled = torch.from_numpy(np.ascontiguousarray(features[:, a : b + 1].mean(axis=1)))
        return torch.softmax(self(pooled[None].float()), dim=1)[0].numpy()


def _training_crops(samples: list[VideoSample], K: int, rng: np.random.Generator):
    """Mean-pooled crops of every ground-truth run (its class) and of background runs (class K)."""
    X, y = [], []
    for s in samples:
        lab = s.targets.class_label
        T = len(lab)
        a = 0
        while a < T:
            b = a
            while b + 1 < T and lab[b + 1] == lab[a]:
                b += 1
            X.append(s.features[:, a : b + 1].mean(axis=1))
            y.append(int(lab[a]))
            a = b + 1
        # extra random crops so the classifier also sees partial spans
        for _ in range(4):
            a, b = sorted(rng.integers(0, T, size=2))
            vals, counts = np.unique(lab[a : b + 1], return_counts=True)
            X.append(s.features[:, a : b + 1].mean(axis=1))
            y.append(int(vals[np.argmax(counts)]))
    return np.stack(X).astype(np.float32), np.array(y)


def train_crop_classifier(samples: list[VideoSample], K: int, seed: int = 0, steps: int = 400) -> CropClassifier:
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    X, y = _training_crops(samples, K, rng)
    clf = CropClassifier(X.shape[1], K)
    opt = torch.optim.AdamW(clf.parameters(), lr=3e-3, weight_decay=1e-3)
    Xt, yt = torch.from_numpy(X), torch.from_numpy(y)
    for _ in range(steps):
        idx = torch.from_numpy(rng.integers(0, len(X), size=min(64, len(X))))
        loss = nn.functional.cross_entropy(clf(Xt[idx]), yt[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
    clf.eval()
    return clf


def decode_sequential(features: np.ndarray, M: np.ndarray, duration: float, clf: CropClassifier,
                      cfg: DecodeConfig) -> list[ActionInstance]:
    """Localize first, then classify the localized span.

    Anchors are snippets their own mask calls foreground; every thresholded run
    becomes a proposal scored by its mean mask value, and the crop classifier
    assigns the label. Classification thus sees whatever the masks got wrong.
    """
    M = np.asarray(M, dtype=np.float64)
    T = M.shape[0]
    K = clf.num_classes
    self_score = np.diag(M)
    anchors = np.flatnonzero(self_score >= 0.5)
    anchors = anchors[np.argsort(-self_score[anchors], kind="stable")][: cfg.top_snippets]
    proposals: dict[tuple[int, int], float] = {}
    for t in anchors:
        col = M[:, t]
        for thr in cfg.mask_thresholds:
            run = pick_run(col >= thr, int(t))
            if run is None:
                continue
            conf = float(col[run[0] : run[1] + 1].mean())
            proposals[run] = max(conf, proposals.get(run, -1.0))
    out = []
    for (a, b), conf in proposals.items():
        p = clf.probs(features, a, b)
        label = int(np.argmax(p[:K]))
        s, e = snippets_to_seconds(a, b, duration, T)
        out.append(ActionInstance(s, min(e, duration), label, conf * float(p[label])))
    return out


def _relative_drop(gt: float, pred: float) -> float:
    return (gt - pred) / gt if gt > 0 else 0.0


def error_propagation_experiment(model: SPOT, test: list[VideoSample], cfg: RunConfig,
                                 clf: CropClassifier | None = None) -> dict:
    """mAP with ground-truth masks vs predicted masks, and the relative drop.

    The parallel detector always takes its classes from its own class stream.
    The sequential skeleton (only when ``clf`` is given) is a simplified
    localize-then-classify stand-in, not a reproduction of any specific
    published baseline.
    """
    gts = ground_truth(test)
    preds = predict(model, test)
    table = {}
    par = {}
    for cond in ("gt_masks", "pred_masks"):
        dets = {}
        for s, (P, M) in zip(test, preds):
            mask = s.targets.gt_mask if cond == "gt_masks" else M
            dets[s.id] = soft_nms(decode_instances(P, mask, s.duration, cfg.decode), cfg.decode)
        par[cond] = map_report(dets, gts, cfg.eval)["average"]
    par["relative_drop"] = _relative_drop(par["gt_masks"], par["pred_masks"])
    table["parallel"] = par
    if clf is not None:
        seq = {}
        for cond in ("gt_masks", "pred_masks"):
            dets = {}
            for s, (_, M) in zip(test, preds):
                mask = s.targets.gt_mask if cond == "gt_masks" else M
                dets[s.id] = soft_nms(decode_sequential(s.features, mask, s.duration, clf, cfg.decode), cfg.decode)
            seq[cond] = map_report(dets, gts, cfg.eval)["average"]
        seq["relative_drop"] = _relative_drop(seq["gt_masks"], seq["pred_masks"])
        table["sequential"] = seq
    return table


def format_error_table(rows: list[dict]) -> str:
    lines = [f"{'seed':>4}  {'model':<10} {'GT masks':>9} {'pred masks':>11} {'drop':>8}"]
    for row in rows:
        for name in ("parallel", "sequential"):
            if name in row:
                r = row[name]
                lines.append(f"{row.get('seed', ''):>4}  {name:<10} {r['gt_masks']:9.4f} {r['pred_masks']:11.4f} "
                             f"{100 * r['relative_drop']:7.1f}%")
    return "\n".join(lines)


def run_seed(cfg: RunConfig, seed: int, root, arms=ARMS, error_prop: bool = True):
    """SSL arms plus the error-propagation table (on the ``full`` model, else the first arm)."""
    bench = load_benchmark(cfg, seed, Path(root) / f"seed_{seed}")
    run = ssl_arms(cfg, seed, bench, arms)
    table = None
    if error_prop:
        model = run.models.get("full") or run.models[arms[0]]
        clf = train_crop_classifier(bench.labeled, cfg.data.num_classes, seed)
        table = error_propagation_experiment(model, bench.test, cfg, clf)
        table["seed"] = seed
    return run, table
