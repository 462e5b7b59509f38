"""Snippet embedding: self-attention over the snippet axis, plus the E_m / E_p projections."""
from __future__ import annotations

import math

import torch
from torch import nn

from .config import EncoderConfig


def sinusoid_table(T: int, dim: int) -> torch.Tensor:
    pos = torch.arange(T, dtype=torch.float32)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float32) * (-math.log(10000.0) / dim))
    table = torch.zeros(T, dim)
    table[:, 0::2] = torch.sin(pos * div)
    table[:, 1::2] = torch.cos(pos * div)[:, : dim // 2]
    return table


class SnippetEncoder(nn.Module):
    """Maps features ``(B, 2d, T)`` to embeddings ``(B, C, T)``.

    With ``positional="none"`` (the default) every operation acts per snippet or
    through attention, so the map is equivariant to permutations of the T axis.
    """

    def __init__(self, in_dim: int, cfg: EncoderConfig, max_len: int = 1024):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.input_proj = nn.Conv1d(in_dim, cfg.dim, kernel_size=1)
        layer = nn.TransformerEncoderLayer(
            d_model=cfg.dim,
            nhead=cfg.heads,
            dim_feedforward=cfg.ff_dim,
            dropout=cfg.dropout,
            batch_first=True,
        )
        self.layers = nn.TransformerEncoder(layer, num_layers=cfg.layers, enable_nested_tensor=False)
        if cfg.positional == "learnable":
            self.pos = nn.Parameter(torch.zeros(max_len, cfg.dim))
            nn.init.normal_(self.pos, std=0.02)
        elif cfg.positional == "fixed":
            self.register_buffer("pos", sinusoid_table(max_len, cfg.dim), persistent=False)
        else:
            self.pos = None

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(features).all():
            raise FloatingPointError("non-finite snippet features")
        x = self.input_proj(features).transpose(1, 2)  # (B, T, C)
        if self.pos is not None:
            x = x + self.pos[: x.shape[1]]
        return self.layers(x).transpose(1, 2)


class Projections(nn.Module):
    """1-D conv projections of E used by boundary refinement: E_m (mask side), E_p (class side)."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.to_m = nn.Conv1d(cfg.dim, cfg.proj_m_dim, cfg.proj_m_kernel, padding=cfg.proj_m_kernel // 2)
        self.to_p = nn.Conv1d(cfg.dim, cfg.proj_p_dim, cfg.proj_p_kernel, padding=cfg.proj_p_kernel // 2)

    def forward(self, E: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.to_m(E), self.to_p(E)
