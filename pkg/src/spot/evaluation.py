"""Temporal IoU, per-class average precision and mAP over tIoU grids."""
from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np

from .config import EvalConfig


def tiou(a, b) -> float:
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def interpolated_ap(precision: np.ndarray, recall: np.ndarray) -> float:
    """All-point interpolated area under a precision/recall curve."""
    mprec = np.concatenate([[0.0], precision, [0.0]])
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mprec = np.maximum.accumulate(mprec[::-1])[::-1]
    idx = np.flatnonzero(mrec[1:] != mrec[:-1]) + 1
    return float(np.sum((mrec[idx] - mrec[idx - 1]) * mprec[idx]))


def average_precision(preds, gts, tiou_thr: float) -> float:
    """AP for one class.

    ``preds``: iterable of (video_id, start, end, score); ``gts``: iterable of
    (video_id, start, end). Predictions are visited by descending score (ties:
    earlier start) and each claims the unmatched ground truth of the same video
    with the highest tIoU, if that tIoU reaches the threshold.
    """
    gts = list(gts)
    if not gts:
        return 0.0
    preds = sorted(preds, key=lambda p: (-p[3], p[1]))
    if not preds:
        return 0.0
    by_video: dict[str, list[int]] = {}
    for j, g in enumerate(gts):
        by_video.setdefault(g[0], []).append(j)
    used = np.zeros(len(gts), dtype=bool)
    tp = np.zeros(len(preds))
    for i, (vid, s, e, _) in enumerate(preds):
        best, best_j = -1.0, -1
        for j in by_video.get(vid, ()):
            if used[j]:
                continue
            ov = tiou((s, e), gts[j][1:3])
            if ov >= tiou_thr and ov > best:
                best, best_j = ov, j
        if best_j >= 0:
            used[best_j] = True
            tp[i] = 1
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(preds) + 1)
    recall = ctp / len(gts)
    return interpolated_ap(precision, recall)


def map_report(detections: dict, ground_truth: dict, cfg: EvalConfig) -> dict:
    """mAP per tIoU threshold and averaged over the grid.

    ``detections``: video id -> list of objects with start/end/label/score;
    ``ground_truth``: video id -> list of objects with start/end/label. Classes
    seen only in detections score AP 0.
    """
    gt_classes = {g.label for segs in ground_truth.values() for g in segs}
    det_classes = {d.label for dets in detections.values() for d in dets}
    spurious = det_classes - gt_classes
    if spurious:
        warnings.warn(f"classes {sorted(spurious)} have detections but no ground truth; AP counted as 0")
    classes = sorted(gt_classes | det_classes)

    preds = {c: [] for c in classes}
    gts = {c: [] for c in classes}
    for vid, dets in detections.items():
        for d in dets:
            if d.label in preds:
                preds[d.label].append((vid, d.start, d.end, d.score))
    for vid, segs in ground_truth.items():
        for g in segs:
            gts[g.label].append((vid, g.start, g.end))

    per_class = {}
    per_thr = {}
    for thr in cfg.tiou_grid:
        aps = [average_precision(preds[c], gts[c], thr) for c in classes]
        per_class[thr] = dict(zip(classes, aps))
        per_thr[thr] = float(np.mean(aps)) if aps else 0.0
    return {
        "per_threshold": per_thr,
        "average": float(np.mean(list(per_thr.values()))),
        "per_class": per_class,
    }


def format_report(report: dict, title: str = "") -> str:
    thrs = list(report["per_threshold"])
    head = " ".join(f"{t:>6.2f}" for t in thrs) + "    Avg"
    vals = " ".join(f"{100 * report['per_threshold'][t]:6.2f}" for t in thrs)
    lines = [title] if title else []
    lines += ["tIoU  " + head, "mAP   " + vals + f" {100 * report['average']:6.2f}"]
    return "\n".join(lines)


def dump_report(report: dict, path):
    out = {
        "per_threshold": {str(k): v for k, v in report["per_threshold"].items()},
        "average": report["average"],
        "per_class": {str(t): {str(c): ap for c, ap in aps.items()} for t, aps in report["per_class"].items()},
    }
    Path(path).write_text(json.dumps(out, indent=2))
