"""Boundary refinement through interaction of the mask and class streams.

Hard snippets come from the mask stream: binarized masks are eroded, the
eroded interior yields hard foreground and the boundary band hard background.
Easy snippets come from confident class-stream predictions. A contrastive
loss pulls hard/easy snippets of the same kind together.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .config import RefineConfig


@dataclass
class SnippetBank:
    X_fg: torch.Tensor  # (n, D) hard foreground, from E_m
    X_bg: torch.Tensor
    Y_fg: torch.Tensor  # (n, D) easy foreground, from E_p
    Y_bg: torch.Tensor


def binarize(M: torch.Tensor, threshold: float) -> torch.Tensor:
    """Heaviside step with ``step(0) = 1``."""
    return (M >= threshold).to(M.dtype)


def _windows(x: torch.Tensor, e: int) -> torch.Tensor:
    # x: (..., T) -> (..., T, e), zero padded at both ends
    r = (e - 1) // 2
    return F.pad(x, (r, r)).unfold(-1, e, 1)


def erode(x: torch.Tensor, e: int, soft: bool = False, beta: float = 0.05) -> torch.Tensor:
    """1-D erosion along the last axis with zero padding.

    Hard mode is a sliding-window minimum. Soft mode replaces the minimum by
    ``-beta * logsumexp(-x / beta)``, which is differentiable and tends to the
    hard minimum as ``beta -> 0``.
    """
    if e % 2 == 0:
        raise ValueError(f"erosion kernel must be odd, got {e}")
    w = _windows(x, e)
    if soft:
        return (-beta * torch.logsumexp(-w / beta, dim=-1)).clamp(0.0, 1.0)
    return w.min(dim=-1).values


def erode_1d(mask_col: torch.Tensor, e: int, soft: bool = False, beta: float = 0.05):
    """Split a binary mask into (interior, band) with band = mask - interior."""
    interior = erode(mask_col, e, soft, beta)
    return interior, mask_col - interior


def _topk_columns(region: torch.Tensor, emb: torch.Tensor, k: int) -> torch.Tensor:
    # region: (T,) weights in [0, 1]; emb: (D, T). Returns (n, D).
    candidates = torch.nonzero(region > 0.5).flatten()
    if candidates.numel() == 0:
        return emb.new_zeros((0, emb.shape[0]))
    masked = emb[:, candidates] * region[candidates]
    scores = masked.norm(dim=0)
    top = torch.topk(scores, min(k, candidates.numel())).indices
    return masked[:, top].T


def mine_hard(M_bin: torch.Tensor, E_m: torch.Tensor, cfg: RefineConfig, soft: bool = False):
    """Top-k hard foreground / background columns of ``E_m`` for one video.

    ``M_bin`` is (T, T) with anchors on the last axis; each anchor column is
    eroded separately and regions are pooled across anchors before ranking.
    """
    interior, band = erode_1d(M_bin.T, cfg.erosion_kernel, soft, cfg.soft_beta)  # (anchor, T)
    fg_region = interior.max(dim=0).values
    bg_region = band.max(dim=0).values
    if cfg.flip_regions:
        fg_region, bg_region = bg_region, fg_region
    return _topk_columns(fg_region, E_m, cfg.top_k), _topk_columns(bg_region, E_m, cfg.top_k)


def mine_easy(P: torch.Tensor, E_p: torch.Tensor, cfg: RefineConfig):
    """Top-k confident foreground / background columns of ``E_p`` for one video; P is (K+1, T)."""
    K = P.shape[0] - 1
    P_bin = binarize(P.detach(), cfg.class_threshold)
    action_prob = P.detach()[:K].max(dim=0).values
    fg_cand = P_bin[:K].amax(dim=0) > 0
    bg_cand = P_bin[K] > 0
    out = []
    for cand, score in ((fg_cand, action_prob), (bg_cand, P.detach()[K])):
        idx = torch.nonzero(cand).flatten()
        if idx.numel() == 0:
            out.append(E_p.new_zeros((0, E_p.shape[0])))
            continue
        top = idx[torch.topk(score[idx], min(cfg.top_k, idx.numel())).indices]
        out.append(E_p[:, top].T)
    return out[0], out[1]


def _infonce(anchors, positives, negatives, temperature):
    a = F.normalize(anchors, dim=1, eps=1e-8)
    sp = a @ F.normalize(positives, dim=1, eps=1e-8).T / temperature
    sn = a @ F.normalize(negatives, dim=1, eps=1e-8).T / temperature
    lse_pos = torch.logsumexp(sp, dim=1)
    lse_all = torch.logsumexp(torch.cat([sp, sn], dim=1), dim=1)
    return (lse_all - lse_pos).mean()


def _triplet(anchors, positives, negatives, margin):
    a = F.normalize(anchors, dim=1, eps=1e-8)
    cp = a @ F.normalize(positives, dim=1, eps=1e-8).T  # (n, p)
    cn = a @ F.normalize(negatives, dim=1, eps=1e-8).T  # (n, q)
    return torch.relu(cn[:, None, :] - cp[:, :, None] + margin).mean()


def refinement_loss(bank: SnippetBank, cfg: RefineConfig) -> torch.Tensor:
    """Foreground term (anchors X_fg, positives Y_fg, negatives Y_bg) plus the
    background term (anchors Y_bg, positives X_bg, negatives Y_fg).

    Zero if any of the four snippet sets is empty.
    """
    sets = (bank.X_fg, bank.X_bg, bank.Y_fg, bank.Y_bg)
    zero = bank.X_fg.new_zeros(())
    if any(s.shape[0] == 0 for s in sets):
        return zero
    if cfg.mode == "infonce":
        term = lambda a, p, n: _infonce(a, p, n, cfg.temperature)
    else:
        term = lambda a, p, n: _triplet(a, p, n, cfg.margin)
    loss = zero
    if cfg.fg_term:
        loss = loss + term(bank.X_fg, bank.Y_fg, bank.Y_bg)
    if cfg.bg_term:
        loss = loss + term(bank.Y_bg, bank.X_bg, bank.Y_fg)
    return loss


def batch_refinement_loss(M, P, E_m, E_p, cfg: RefineConfig, soft: bool = True) -> torch.Tensor:
    """Mean refinement loss over a batch; M (B, T, T), P (B, K+1, T)."""
    losses = []
    for b in range(M.shape[0]):
        M_bin = binarize(M[b].detach(), cfg.mask_threshold)
        X_fg, X_bg = mine_hard(M_bin, E_m[b], cfg, soft=soft)
        Y_fg, Y_bg = mine_easy(P[b], E_p[b], cfg)
        losses.append(refinement_loss(SnippetBank(X_fg, X_bg, Y_fg, Y_bg), cfg))
    return torch.stack(losses).mean()
