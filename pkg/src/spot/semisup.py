"""Semi-supervised fine-tuning with sharpened pseudo labels."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .config import ConfigError, LossConfig, RefineConfig, RunConfig
from .data import VideoSample
from .decode import pick_run
from .inference import evaluate_samples
from .losses import classification_loss, mask_loss, reconstruction_loss
from .model import SPOT, ModelOutput
from .refine import batch_refinement_loss

log = logging.getLogger(__name__)


@dataclass
class PseudoLabels:
    label: torch.Tensor  # (..., T) class index, K = background
    confidence: torch.Tensor
    keep: torch.Tensor  # confidence >= class threshold
    tau_c: torch.Tensor


def sharpen_class(logits: torch.Tensor, tau: float = 1.1, threshold: float = 0.3) -> PseudoLabels:
    """Pseudo classes from (..., K+1, T) logits.

    The temperature ``tau_c = tau - (tau - 1) * y_max`` depends on the largest
    action-class probability ``y_max`` of the unsharpened prediction.
    """
    probs = torch.softmax(logits, dim=-2)
    y_max = probs[..., :-1, :].max(dim=-2).values
    tau_c = tau - (tau - 1.0) * y_max
    sharp = torch.softmax(logits / tau_c.unsqueeze(-2), dim=-2)
    conf, label = sharp.max(dim=-2)
    return PseudoLabels(label, conf, conf >= threshold, tau_c)


def sharpen_mask(mask_logits: torch.Tensor, tau_m: float = 0.7, threshold: float = 0.7) -> torch.Tensor:
    soft = torch.sigmoid(mask_logits / tau_m)
    return (soft >= threshold).to(mask_logits.dtype)


def tail_classes(samples: list[VideoSample], K: int, fraction: float = 0.3) -> list[int]:
    """The ``floor(fraction * K)`` classes with the fewest labeled foreground snippets."""
    counts = np.zeros(K)
    for s in samples:
        lab = s.targets.class_label
        counts += np.bincount(lab[lab < K], minlength=K)[:K]
    n = int(math.floor(fraction * K))
    return sorted(np.argsort(counts, kind="stable")[:n].tolist())


@dataclass
class Batch:
    features: torch.Tensor  # (B, 2d, T)
    labels: torch.Tensor  # (B, T)
    valid: torch.Tensor  # (B, T)
    masks: torch.Tensor  # (B, T, T)


def labeled_batch(samples: list[VideoSample]) -> Batch:
    feats = torch.from_numpy(np.stack([s.features for s in samples]))
    labels = torch.from_numpy(np.stack([s.targets.class_label for s in samples]))
    masks = torch.from_numpy(np.stack([s.targets.gt_mask for s in samples]))
    return Batch(feats, labels, torch.ones_like(labels, dtype=torch.bool), masks)


@torch.no_grad()
def pseudo_batch(model: SPOT, features: torch.Tensor, cfg: RunConfig) -> Batch:
    """Pseudo targets in eval mode. Anchors confidently called background get empty mask columns."""
    was_training = model.training
    model.eval()
    out = model(features)
    model.train(was_training)
    K = model.num_classes
    pl = sharpen_class(out.class_logits, cfg.loss.tau, cfg.refine.class_threshold)
    G = sharpen_mask(out.mask_logits, cfg.loss.tau_mask, cfg.refine.mask_threshold)
    bg_anchor = (pl.label == K) & pl.keep
    G = G.masked_fill(bg_anchor[:, None, :], 0.0)
    if cfg.loss.pseudo_mask_run:
        G = anchor_runs(G)
    return Batch(features, pl.label, pl.keep, G)


def anchor_runs(G: torch.Tensor) -> torch.Tensor:
    """Keep, in every mask column, only the run of ones the decoder would pick for that anchor."""
    out = torch.zeros_like(G)
    arr = G.numpy() > 0
    for b in range(arr.shape[0]):
        for t in np.flatnonzero(arr[b].any(axis=0)):
            run = pick_run(arr[b, :, t], int(t))
            out[b, run[0] : run[1] + 1, t] = 1.0
    return out


def total_loss(out: ModelOutput, batch: Batch, loss_cfg: LossConfig, refine_cfg: RefineConfig, tail=()):
    """L = L_c + L_m + L_ref + L_rec, identical for ground-truth and pseudo targets."""
    L_c = classification_loss(out.P, batch.labels, batch.valid, tail, refine_cfg.class_threshold)
    L_m = mask_loss(out.M, batch.masks, loss_cfg.dice_weight, loss_cfg.standard_dice)
    zero = L_c.new_zeros(())
    L_ref = batch_refinement_loss(out.M, out.P, out.E_m, out.E_p, refine_cfg) if loss_cfg.use_ref else zero
    L_rec = reconstruction_loss(batch.features, out.recon) if loss_cfg.use_rec else zero
    L = L_c + L_m + L_ref + L_rec
    return L, {"L_c": L_c.item(), "L_m": L_m.item(), "L_ref": L_ref.item(), "L_rec": L_rec.item()}


def _concat(a: Batch, b: Batch) -> Batch:
    return Batch(*(torch.cat([x, y]) for x, y in zip(
        (a.features, a.labels, a.valid, a.masks), (b.features, b.labels, b.valid, b.masks))))


class _Cycler:
    def __init__(self, n: int, rng: np.random.Generator):
        self.n, self.rng = n, rng
        self.order, self.pos = rng.permutation(n), 0

    def take(self, k: int) -> list[int]:
        out = []
        for _ in range(k):
            if self.pos == self.n:
                self.order, self.pos = self.rng.permutation(self.n), 0
            out.append(int(self.order[self.pos]))
            self.pos += 1
        return out


def finetune(
    labeled: list[VideoSample],
    unlabeled: list[VideoSample],
    cfg: RunConfig,
    seed: int = 0,
    init: SPOT | None = None,
    val: list[VideoSample] | None = None,
    log_path=None,
    pseudo_labels: bool = True,
):
    """Stage-II training. Returns (model, per-epoch history).

    ``init`` is a pre-trained model whose class head is discarded. The first
    ``warmup_epochs`` use labeled videos only; afterwards every step mixes
    labeled and pseudo-labeled videos 1:1, with pseudo labels refreshed at the
    start of each epoch. With no unlabeled videos (or ``pseudo_labels=False``)
    this is plain supervised training.
    """
    if not labeled:
        raise ConfigError("fine-tuning needs at least one labeled video")
    tc = cfg.train
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    K = cfg.data.num_classes
    in_dim = labeled[0].features.shape[0]
    model = SPOT(in_dim, K, tc.temporal_length, cfg.encoder)
    if init is not None:
        state = {k: v for k, v in init.state_dict().items() if not k.startswith("class_head")}
        model.load_state_dict(state, strict=False)
    use_unlabeled = pseudo_labels and len(unlabeled) > 0
    tail = tail_classes(labeled, K, cfg.loss.tail_fraction)

    half = tc.batch_size // 2
    steps = tc.steps_per_epoch or math.ceil(
        max(len(labeled), len(unlabeled) if use_unlabeled else 0) / (half if use_unlabeled else tc.batch_size)
    )
    opt = torch.optim.AdamW(model.parameters(), lr=tc.lr, weight_decay=tc.weight_decay)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(1, steps * tc.finetune_epochs))
    lab_iter = _Cycler(len(labeled), rng)
    unl_iter = _Cycler(len(unlabeled), rng) if use_unlabeled else None
    unl_feats = torch.from_numpy(np.stack([s.features for s in unlabeled])) if use_unlabeled else None

    history = []
    log_fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(tc.finetune_epochs):
            pseudo = None
            if use_unlabeled and epoch >= tc.warmup_epochs:
                pseudo = pseudo_batch(model, unl_feats, cfg)
            model.train()
            sums = {"L": 0.0, "L_c": 0.0, "L_m": 0.0, "L_ref": 0.0, "L_rec": 0.0}
            for _ in range(steps):
                if pseudo is None:
                    batch = labeled_batch([labeled[i] for i in lab_iter.take(tc.batch_size)])
                else:
                    lb = labeled_batch([labeled[i] for i in lab_iter.take(half)])
                    idx = torch.tensor(unl_iter.take(tc.batch_size - half))
                    ub = Batch(pseudo.features[idx], pseudo.labels[idx], pseudo.valid[idx], pseudo.masks[idx])
                    batch = _concat(lb, ub)
                out = model(batch.features)
                loss, parts = total_loss(out, batch, cfg.loss, cfg.refine, tail)
                opt.zero_grad()
                loss.backward()
                nn.utils.clip_grad_norm_(model.parameters(), tc.grad_clip)
                opt.step()
                sched.step()
                sums["L"] += loss.item()
                for k, v in parts.items():
                    sums[k] += v
            row = {"epoch": epoch, **{k: v / steps for k, v in sums.items()}, "val_mAP": None}
            if val:
                row["val_mAP"] = evaluate_samples(model, val, cfg)["average"]
            history.append(row)
            log.info("finetune %s", row)
            if log_fh:
                log_fh.write(json.dumps(row) + "\n")
                log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()
    model.eval()
    return model, history
