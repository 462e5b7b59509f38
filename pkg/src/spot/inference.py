"""Batched model inference, decoding and scoring over prepared videos."""
from __future__ import annotations

import numpy as np
import torch

from .config import RunConfig
from .data import VideoSample
from .decode import ActionInstance, detect
from .evaluation import map_report
from .model import SPOT


@torch.no_grad()
def predict(model: SPOT, samples: list[VideoSample], batch_size: int = 32):
    """Per-video (P, M) numpy arrays in eval mode."""
    model.eval()
    out = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i : i + batch_size]
        feats = torch.from_numpy(np.stack([s.features for s in chunk]))
        res = model(feats)
        for b in range(len(chunk)):
            out.append((res.P[b].numpy(), res.M[b].numpy()))
    return out


def detect_all(model: SPOT, samples: list[VideoSample], cfg: RunConfig) -> dict[str, list[ActionInstance]]:
    return {
        s.id: detect(P, M, s.duration, cfg.decode)
        for s, (P, M) in zip(samples, predict(model, samples))
    }


def ground_truth(samples: list[VideoSample]) -> dict:
    return {s.id: list(s.record.segments) for s in samples}


def evaluate_samples(model: SPOT, samples: list[VideoSample], cfg: RunConfig) -> dict:
    return map_report(detect_all(model, samples, cfg), ground_truth(samples), cfg.eval)
