"""Self-supervised pre-training with a random-foreground pretext task.

A random contiguous span of each feature sequence is kept as pseudo
foreground and everything else is zeroed. From that masked sequence the model
predicts (1) the foreground mask, (2) the original position of every snippet
after a random shuffle, and (3) the unmasked features.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .config import RunConfig
from .losses import mask_loss, position_loss, reconstruction_loss
from .model import SPOT

log = logging.getLogger(__name__)


@dataclass
class PretextSample:
    masked_features: np.ndarray  # (2d, T), zero outside [start, end)
    start: int
    end: int
    shuffle_perm: np.ndarray  # slot i holds original snippet shuffle_perm[i]
    position_targets: np.ndarray
    recon_target: np.ndarray

    @property
    def foreground(self) -> np.ndarray:
        fg = np.zeros(self.masked_features.shape[1], dtype=np.float32)
        fg[self.start : self.end] = 1.0
        return fg


@dataclass
class PretextLossWeights:
    rec: float = 0.8
    tp: float = 0.4


def make_pretext_sample(features: np.ndarray, rng: np.random.Generator, min_frac=0.2, max_frac=0.8):
    if not 0 < min_frac <= max_frac <= 1:
        raise ValueError(f"need 0 < min_frac <= max_frac <= 1, got {min_frac}, {max_frac}")
    T = features.shape[1]
    length = int(round(rng.uniform(min_frac, max_frac) * T))
    length = min(max(length, 1), T)
    start = int(rng.integers(0, T - length + 1))
    end = start + length
    masked = np.zeros_like(features)
    masked[:, start:end] = features[:, start:end]
    perm = rng.permutation(T)
    return PretextSample(masked, start, end, perm, perm.copy(), features)


class PositionHead(nn.Module):
    """Small transformer with learnable positional embedding; one logit row per slot."""

    def __init__(self, dim: int, T: int, heads: int = 4):
        super().__init__()
        self.pos = nn.Parameter(torch.randn(T, dim) * 0.02)
        layer = nn.TransformerEncoderLayer(dim, heads, dim_feedforward=2 * dim, dropout=0.0, batch_first=True)
        self.block = nn.TransformerEncoder(layer, num_layers=1, enable_nested_tensor=False)
        self.out = nn.Linear(dim, T)

    def forward(self, E_shuffled: torch.Tensor) -> torch.Tensor:
        x = E_shuffled.transpose(1, 2) + self.pos
        return self.out(self.block(x))  # (B, T slots, T classes)


@dataclass
class PretextOutput:
    mask: torch.Tensor  # (B, T, T)
    position_logits: torch.Tensor  # (B, T, T)
    recon: torch.Tensor  # (B, 2d, T)
    E: torch.Tensor

    @property
    def mask_pred(self) -> torch.Tensor:
        """Anchor-averaged foreground prediction, (B, T)."""
        return self.mask.mean(dim=2)


class PretextModel(nn.Module):
    def __init__(self, spot: SPOT):
        super().__init__()
        self.spot = spot
        self.position_head = PositionHead(spot.encoder.cfg.dim, spot.T, spot.encoder.cfg.heads)

    def forward(self, masked: torch.Tensor, perm: torch.Tensor) -> PretextOutput:
        E = self.spot.embed(masked)
        # the encoder has no positional encoding, so embedding the shuffled
        # sequence equals shuffling the embedding
        idx = perm[:, None, :].expand(-1, E.shape[1], -1)
        E_shuffled = torch.gather(E, 2, idx)
        return PretextOutput(
            mask=self.spot.predict_masks(E),
            position_logits=self.position_head(E_shuffled),
            recon=self.spot.recon_head(E),
            E=E,
        )


def collate(samples: list[PretextSample], anchor_targets: bool = False):
    """Stack samples. With ``anchor_targets`` the mask target mirrors ground-truth
    targets (anchors inside the planted span predict it, others predict nothing);
    otherwise every anchor predicts the span."""
    masked = torch.from_numpy(np.stack([s.masked_features for s in samples])).float()
    perm = torch.from_numpy(np.stack([s.shuffle_perm for s in samples])).long()
    targets = torch.from_numpy(np.stack([s.position_targets for s in samples])).long()
    recon = torch.from_numpy(np.stack([s.recon_target for s in samples])).float()
    fg = torch.from_numpy(np.stack([s.foreground for s in samples]))
    T = fg.shape[1]
    G = fg[:, :, None] * fg[:, None, :] if anchor_targets else fg[:, :, None].expand(-1, T, T)
    return masked, perm, targets, recon, G


def pretrain_loss(out: PretextOutput, targets, recon_target, G, weights=PretextLossWeights(), dice_weight=0.6):
    L_m = mask_loss(out.mask, G, dice_weight)
    L_rec = reconstruction_loss(recon_target, out.recon)
    L_tp = position_loss(out.position_logits, targets)
    total = L_m + weights.rec * L_rec + weights.tp * L_tp
    return total, {"L_m": L_m.item(), "L_rec": L_rec.item(), "L_tp": L_tp.item()}


def pretrain(features: list[np.ndarray], cfg: RunConfig, seed: int = 0, num_classes: int | None = None):
    """Stage-I training on feature sequences only; returns (SPOT model, per-epoch history).

    ``features`` are already resampled to ``cfg.train.temporal_length``.
    """
    tc = cfg.train
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    in_dim = features[0].shape[0]
    K = num_classes or cfg.data.num_classes
    spot = SPOT(in_dim, K, tc.temporal_length, cfg.encoder)
    model = PretextModel(spot)
    # the class stream is not pre-trained
    params = [p for n, p in model.named_parameters() if not n.startswith("spot.class_head")]
    opt = torch.optim.AdamW(params, lr=tc.pretrain_lr, weight_decay=tc.weight_decay)
    steps = tc.pretrain_steps_per_epoch or math.ceil(len(features) / tc.batch_size)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(1, steps * tc.pretrain_epochs))
    weights = PretextLossWeights(cfg.loss.pretext_rec_weight, cfg.loss.pretext_tp_weight)

    history = []
    order = rng.permutation(len(features))
    cursor = 0
    for epoch in range(tc.pretrain_epochs):
        model.train()
        sums = {"L_pre": 0.0, "L_m": 0.0, "L_rec": 0.0, "L_tp": 0.0}
        for _ in range(steps):
            idx = []
            for _ in range(tc.batch_size):
                if cursor == len(order):
                    order, cursor = rng.permutation(len(features)), 0
                idx.append(order[cursor])
                cursor += 1
            batch = [make_pretext_sample(features[i], rng, *tc.fg_frac) for i in idx]
            masked, perm, targets, recon_target, G = collate(batch, cfg.loss.pretext_anchor_targets)
            out = model(masked, perm)
            loss, parts = pretrain_loss(out, targets, recon_target, G, weights, cfg.loss.dice_weight)
            opt.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(params, tc.grad_clip)
            opt.step()
            sched.step()
            sums["L_pre"] += loss.item()
            for k, v in parts.items():
                sums[k] += v
        row = {"epoch": epoch, **{k: v / steps for k, v in sums.items()}}
        history.append(row)
        log.info("pretrain %s", row)
    spot.eval()
    return spot, history
