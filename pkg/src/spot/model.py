"""Full detector: shared embedding, parallel class/mask streams, refinement projections."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .config import EncoderConfig
from .encoder import Projections, SnippetEncoder
from .heads import ClassHead, MaskHead


@dataclass
class ModelOutput:
    E: torch.Tensor  # (B, C, T)
    class_logits: torch.Tensor  # (B, K+1, T)
    P: torch.Tensor  # (B, K+1, T)
    mask_logits: torch.Tensor  # (B, T, T)
    M: torch.Tensor  # (B, T, T)
    E_m: torch.Tensor
    E_p: torch.Tensor
    recon: torch.Tensor  # (B, 2d, T)


class SPOT(nn.Module):
    def __init__(self, in_dim: int, num_classes: int, T: int, cfg: EncoderConfig):
        super().__init__()
        self.in_dim, self.num_classes, self.T = in_dim, num_classes, T
        self.encoder = SnippetEncoder(in_dim, cfg, max_len=max(T, 1024))
        self.class_head = ClassHead(cfg.dim, num_classes)
        self.mask_head = MaskHead(cfg.dim, T, mode=cfg.mask_head)
        self.proj = Projections(cfg)
        self.recon_head = nn.Conv1d(cfg.dim, in_dim, 1)

    def embed(self, features: torch.Tensor) -> torch.Tensor:
        return self.encoder(features)

    def project(self, E: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.proj(E)

    def classify(self, E: torch.Tensor) -> torch.Tensor:
        return self.class_head(E)

    def predict_masks(self, E: torch.Tensor) -> torch.Tensor:
        return self.mask_head(E)

    def forward(self, features: torch.Tensor) -> ModelOutput:
        E = self.embed(features)
        class_logits = self.class_head.logits(E)
        mask_logits = self.mask_head.logits(E)
        E_m, E_p = self.project(E)
        return ModelOutput(
            E=E,
            class_logits=class_logits,
            P=torch.softmax(class_logits, dim=1),
            mask_logits=mask_logits,
            M=torch.sigmoid(mask_logits),
            E_m=E_m,
            E_p=E_p,
            recon=self.recon_head(E),
        )

    def reset_class_head(self):
        self.class_head = ClassHead(self.class_head.conv.in_channels, self.num_classes)


def save_checkpoint(module: nn.Module, path, meta: dict | None = None):
    """One ``.npz`` archive: parameter name -> float32 array (shape carried by the array).

    ``meta`` (JSON-serializable) is stored as UTF-8 bytes under ``__meta__``.
    """
    arrays = {k: v.detach().cpu().numpy().astype(np.float32) for k, v in module.state_dict().items()}
    if meta:
        arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(module: nn.Module, path, exclude: tuple[str, ...] = ()) -> nn.Module:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path) as archive:
        state = {k: torch.from_numpy(archive[k]) for k in archive.files if k != "__meta__"}
    state = {k: v for k, v in state.items() if not k.startswith(exclude)}
    own = module.state_dict()
    for k, v in state.items():
        if k in own:
            own[k] = v.to(own[k].dtype)
    module.load_state_dict(own)
    return module


def read_checkpoint_meta(path) -> dict:
    with np.load(Path(path)) as archive:
        if "__meta__" not in archive.files:
            return {}
        return json.loads(archive["__meta__"].tobytes().decode())
