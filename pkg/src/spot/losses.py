"""Training losses shared by pre-training and fine-tuning.

All functions take batched tensors: class probabilities ``P`` (B, K+1, T),
masks ``M`` (B, T, T) with anchors on the last axis.
"""
from __future__ import annotations

import torch
import torch.nn.functional as F

EPS = 1e-7


def classification_loss(
    P: torch.Tensor,
    labels: torch.Tensor,
    valid: torch.Tensor | None = None,
    tail_classes=(),
    slack: float = 0.3,
) -> torch.Tensor:
    """Class-balanced per-class binary cross-entropy, averaged over snippets.

    Foreground snippets use ``-log p_y - sum_{k != y} log(1 - p_k)``. On
    background snippets a tail action class ``k`` whose probability is below
    ``slack`` drops its negative term, so tail classes may stay weakly active.
    Snippets with ``valid == 0`` (unconfident pseudo labels) contribute nothing
    but still count in the ``1/T`` normalization.
    """
    B, C, T = P.shape
    K = C - 1
    p = P.clamp(EPS, 1 - EPS)
    onehot = F.one_hot(labels, C).permute(0, 2, 1).to(p.dtype)  # (B, C, T)
    pos = -(onehot * torch.log(p)).sum(dim=1)
    neg_terms = -(1 - onehot) * torch.log(1 - p)
    if len(tail_classes):
        tail = torch.zeros(C, dtype=torch.bool, device=P.device)
        tail[list(tail_classes)] = True
        is_bg = (labels == K)[:, None, :]
        drop = tail[None, :, None] & is_bg & (P.detach() < slack)
        neg_terms = neg_terms.masked_fill(drop, 0.0)
    per_snippet = pos + neg_terms.sum(dim=1)
    if valid is not None:
        per_snippet = per_snippet * valid.to(per_snippet.dtype)
    return (per_snippet.sum(dim=1) / T).mean()


def class_balance_weights(G: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Inverse-proportion weights per video: ``n / (2 n_fg)`` and ``n / (2 n_bg)``."""
    n = G[0].numel()
    n_fg = G.flatten(1).sum(dim=1)
    n_bg = n - n_fg
    return n / (2 * n_fg.clamp(min=1)), n / (2 * n_bg.clamp(min=1))


def mask_loss(
    M: torch.Tensor,
    G: torch.Tensor,
    dice_weight: float = 0.6,
    standard_dice: bool = False,
) -> torch.Tensor:
    """Weighted BCE summed over snippets plus a dice term, averaged over anchors.

    The dice term is ``1 - m.g / sum(m^2 + g^2)`` (no factor 2 in the
    numerator) unless ``standard_dice``; an all-zero m and g column scores 0.
    """
    G = G.to(M.dtype)
    m = M.clamp(EPS, 1 - EPS)
    beta_fg, beta_bg = class_balance_weights(G)
    bce = -(
        beta_fg[:, None, None] * G * torch.log(m)
        + beta_bg[:, None, None] * (1 - G) * torch.log(1 - m)
    ).sum(dim=1)  # (B, anchors)
    return (bce + dice_weight * dice_term(M, G, standard_dice)).mean()


def dice_term(M: torch.Tensor, G: torch.Tensor, standard_dice: bool = False) -> torch.Tensor:
    """Per-anchor ``1 - m.g / sum(m^2 + g^2)`` over the snippet axis (dim 1).

    With ``standard_dice`` the numerator is doubled. Empty m and g score 0.
    """
    G = G.to(M.dtype)
    inter = (M * G).sum(dim=1)
    if standard_dice:
        inter = 2 * inter
    denom = (M * M + G * G).sum(dim=1)
    safe = torch.where(denom > 0, denom, torch.ones_like(denom))
    return torch.where(denom > 0, 1 - inter / safe, torch.zeros_like(denom))


def reconstruction_loss(features: torch.Tensor, recon: torch.Tensor) -> torch.Tensor:
    """Squared distance between L2-normalized feature and reconstruction columns, averaged over snippets."""
    f = F.normalize(features, dim=1, eps=1e-8)
    r = F.normalize(recon, dim=1, eps=1e-8)
    return ((f - r) ** 2).sum(dim=1).mean()


def position_loss(position_logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Cross-entropy over position classes; logits (B, T_slots, T_classes)."""
    return F.cross_entropy(position_logits.flatten(0, 1), targets.flatten())
