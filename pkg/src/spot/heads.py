"""The two parallel output streams sitting on the shared embedding."""
from __future__ import annotations

import math

import torch
from torch import nn


class ClassHead(nn.Module):
    """Per-snippet (K+1)-way classification: one 1-D conv then softmax over classes."""

    def __init__(self, dim: int, num_classes: int, kernel: int = 3):
        super().__init__()
        self.num_classes = num_classes
        self.conv = nn.Conv1d(dim, num_classes + 1, kernel, padding=kernel // 2)

    def logits(self, E: torch.Tensor) -> torch.Tensor:
        return self.conv(E)

    def forward(self, E: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(E), dim=1)


class MaskHead(nn.Module):
    """Per-anchor temporal masks, ``M[b, i, t]`` = foreground probability of snippet
    ``i`` as seen from anchor ``t``.

    The anchor side is a stack of three 1-D convs (kernels 3-3-1). In
    ``"channels"`` mode the last conv emits T channels per anchor directly. In
    ``"relational"`` mode it emits a query per anchor that is scored against a
    per-snippet key, which lets an embedding without positional information
    still say *where* the foreground is.
    """

    def __init__(self, dim: int, T: int, hidden: int | None = None, mode: str = "relational"):
        super().__init__()
        hidden = hidden or dim
        self.T, self.mode = T, mode
        out = T if mode == "channels" else hidden
        self.net = nn.Sequential(
            nn.Conv1d(dim, hidden, 3, padding=1),
            nn.ReLU(),
            nn.Conv1d(hidden, hidden, 3, padding=1),
            nn.ReLU(),
            nn.Conv1d(hidden, out, 1),
        )
        if mode == "relational":
            self.key = nn.Conv1d(dim, hidden, 3, padding=1)
            self.bias = nn.Parameter(torch.zeros(()))
        elif mode != "channels":
            raise ValueError(f"unknown mask head mode {mode!r}")

    def logits(self, E: torch.Tensor) -> torch.Tensor:
        q = self.net(E)
        if self.mode == "channels":
            return q
        k = self.key(E)
        return torch.einsum("bci,bct->bit", k, q) / math.sqrt(q.shape[1]) + self.bias

    def forward(self, E: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(E))
