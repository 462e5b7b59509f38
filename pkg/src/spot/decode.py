"""Turn class scores and anchor masks into scored action instances."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import DecodeConfig
from .data import snippets_to_seconds


@dataclass(frozen=True)
class ActionInstance:
    start: float
    end: float
    label: int
    score: float


def runs(binary: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of ones as inclusive (a, b) pairs."""
    padded = np.concatenate([[0], binary.astype(np.int8), [0]])
    diff = np.diff(padded)
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


def pick_run(col_bin: np.ndarray, anchor: int) -> tuple[int, int] | None:
    """The run containing ``anchor``, else the longest run (earliest on ties)."""
    rs = runs(col_bin)
    if not rs:
        return None
    for a, b in rs:
        if a <= anchor <= b:
            return a, b
    return max(rs, key=lambda r: (r[1] - r[0], -r[0]))


def decode_instances(P: np.ndarray, M: np.ndarray, duration: float, cfg: DecodeConfig) -> list[ActionInstance]:
    """Candidates before suppression.

    ``P`` is (K+1, T) class probabilities, ``M`` (T, T) masks with anchors on
    axis 1. Anchors whose best action probability exceeds the class threshold
    are kept (at most ``top_snippets``); each anchor's mask is thresholded at
    every value of the sweep and identical (run, label) pairs keep their best
    score.
    """
    P = np.asarray(P, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    K = P.shape[0] - 1
    T = M.shape[0]
    action_prob = P[:K].max(axis=0)
    action = P[:K].argmax(axis=0)
    anchors = np.flatnonzero(action_prob > cfg.class_threshold)
    anchors = anchors[np.argsort(-action_prob[anchors], kind="stable")][: cfg.top_snippets]

    best: dict[tuple[int, int, int], float] = {}
    for t in anchors:
        col = M[:, t]
        score = float(action_prob[t] * col.max())
        label = int(action[t])
        for thr in cfg.mask_thresholds:
            run = pick_run(col >= thr, int(t))
            if run is None:
                continue
            key = (run[0], run[1], label)
            if score > best.get(key, -1.0):
                best[key] = score
    out = []
    for (a, b, label), score in best.items():
        s, e = snippets_to_seconds(a, b, duration, T)
        out.append(ActionInstance(s, min(e, duration), label, score))
    return out


def _tiou_many(seg, starts, ends):
    inter = np.clip(np.minimum(seg[1], ends) - np.maximum(seg[0], starts), 0, None)
    union = (seg[1] - seg[0]) + (ends - starts) - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)


def soft_nms(candidates: list[ActionInstance], cfg: DecodeConfig) -> list[ActionInstance]:
    """Gaussian SoftNMS within each class.

    Repeatedly keep the highest-scoring remaining candidate and multiply the
    scores of remaining same-class candidates by ``exp(-tiou^2 / sigma)``. A
    candidate whose score is decayed below ``nms_threshold`` is dropped;
    candidates that are never decayed keep their score whatever its value.
    """
    if not candidates:
        return []
    starts = np.array([c.start for c in candidates])
    ends = np.array([c.end for c in candidates])
    labels = np.array([c.label for c in candidates])
    scores = np.array([c.score for c in candidates], dtype=np.float64)
    alive = np.ones(len(candidates), dtype=bool)
    kept = []
    while alive.any():
        live = np.flatnonzero(alive)
        # ties: earlier start, then input order
        i = live[np.lexsort((live, starts[live], -scores[live]))[0]]
        alive[i] = False
        kept.append(ActionInstance(float(starts[i]), float(ends[i]), int(labels[i]), float(scores[i])))
        others = np.flatnonzero(alive & (labels == labels[i]))
        if others.size == 0:
            continue
        iou = _tiou_many((starts[i], ends[i]), starts[others], ends[others])
        decay = np.exp(-(iou**2) / cfg.nms_sigma)
        scores[others] *= decay
        dropped = others[(decay < 1.0) & (scores[others] < cfg.nms_threshold)]
        alive[dropped] = False
    kept.sort(key=lambda c: (-c.score, c.start))
    return kept[: cfg.max_outputs]


def detect(P, M, duration, cfg: DecodeConfig) -> list[ActionInstance]:
    return soft_nms(decode_instances(P, M, duration, cfg), cfg)


def dump_detections(detections: dict[str, list[ActionInstance]], classes: list[str], path):
    """ActivityNet submission layout: ``{"results": {vid: [{segment, label, score}]}}``."""
    results = {
        vid: [{"segment": [d.start, d.end], "label": classes[d.label], "score": d.score} for d in dets]
        for vid, dets in detections.items()
    }
    Path(path).write_text(json.dumps({"version": "VERSION 1.3", "results": results, "external_data": {}}))


def load_detections(path, classes: list[str]) -> dict[str, list[ActionInstance]]:
    raw = json.loads(Path(path).read_text())
    raw = raw.get("results", raw)
    index = {c: i for i, c in enumerate(classes)}
    return {
        vid: [ActionInstance(float(d["segment"][0]), float(d["segment"][1]), index[d["label"]], float(d["score"])) for d in dets]
        for vid, dets in raw.items()
    }
