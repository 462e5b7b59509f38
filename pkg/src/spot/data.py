"""Annotations, feature files, synthetic datasets, and per-snippet training targets.

Class indices are 0-based: actions are ``0..K-1`` and ``K`` is background.
Snippet ``t`` of a length-``T`` grid sits at time ``(t + 0.5) / T * duration``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, SyntheticConfig


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class ActionSegment:
    start: float
    end: float
    label: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise AnnotationError(f"invalid segment [{self.start}, {self.end}]")
        if self.label < 0:
            raise AnnotationError(f"negative label {self.label}")


@dataclass
class VideoRecord:
    id: str
    duration: float
    segments: list[ActionSegment] = field(default_factory=list)
    feature_path: str = ""

    def __post_init__(self):
        for seg in self.segments:
            if seg.end > self.duration + 1e-9:
                raise AnnotationError(
                    f"video {self.id}: segment [{seg.start}, {seg.end}] exceeds duration {self.duration}"
                )

    def hidden(self) -> "VideoRecord":
        return VideoRecord(self.id, self.duration, [], self.feature_path)


@dataclass
class DatasetSplit:
    labeled: list[VideoRecord]
    unlabeled: list[VideoRecord]
    test: list[VideoRecord]
    classes: list[str]
    seed: int = 0
    fraction: float = 1.0

    def __post_init__(self):
        overlap = {r.id for r in self.labeled} & {r.id for r in self.unlabeled}
        if overlap:
            raise AnnotationError(f"videos both labeled and unlabeled: {sorted(overlap)[:5]}")

    @property
    def num_classes(self) -> int:
        return len(self.classes)


@dataclass
class TrainTargets:
    class_label: np.ndarray  # (T,) int64, K = background
    gt_mask: np.ndarray  # (T, T) float32, column t = mask of the instance covering snippet t
    fg_indices: np.ndarray
    bg_indices: np.ndarray


# ---------------------------------------------------------------- annotations


def load_annotations(path, classes: list[str] | None = None) -> tuple[list[VideoRecord], list[str]]:
    """Read ActivityNet-style annotations.

    Schema: ``{video_id: {"duration_second": float, "annotations": [{"segment": [s, e], "label": str}]}}``.
    A top-level ``"database"`` wrapper is accepted too. Labels map to dense
    indices in sorted order unless ``classes`` pins the mapping.
    """
    with open(path) as fh:
        raw = json.load(fh)
    if "database" in raw and isinstance(raw["database"], dict):
        raw = raw["database"]
    if classes is None:
        classes = sorted({a["label"] for v in raw.values() for a in v.get("annotations", [])})
    index = {name: i for i, name in enumerate(classes)}

    records = []
    for vid, entry in raw.items():
        duration = float(entry["duration_second"])
        segments = []
        for ann in entry.get("annotations", []):
            s, e = (float(x) for x in ann["segment"])
            if e <= s:
                raise AnnotationError(f"video {vid}: segment [{s}, {e}] has end <= start")
            if ann["label"] not in index:
                raise AnnotationError(f"video {vid}: unknown label {ann['label']!r}")
            segments.append(ActionSegment(s, e, index[ann["label"]]))
        try:
            rec = VideoRecord(vid, duration, segments, entry.get("feature_path", ""))
        except AnnotationError as exc:
            raise AnnotationError(f"video {vid}: {exc}") from exc
        records.append(rec)
    return records, list(classes)


def dump_annotations(records: list[VideoRecord], classes: list[str], path):
    out = {}
    for r in records:
        out[r.id] = {
            "duration_second": r.duration,
            "feature_path": r.feature_path,
            "annotations": [
                {"segment": [s.start, s.end], "label": classes[s.label]} for s in r.segments
            ],
        }
    Path(path).write_text(json.dumps(out, indent=1, sort_keys=True))


# ---------------------------------------------------------------- features


def write_features(values: np.ndarray, path):
    """Raw little-endian float32, row-major (2d, T_raw), with a JSON sidecar header."""
    path = Path(path)
    arr = np.ascontiguousarray(values, dtype="<f4")
    arr.tofile(path)
    header = {"dims": list(arr.shape), "dtype": "<f4"}
    path.with_suffix(".json").write_text(json.dumps(header))


def read_features(path) -> np.ndarray:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    arr = np.fromfile(path, dtype=header["dtype"])
    arr = arr.reshape(header["dims"]).astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{path}: non-finite feature values")
    return arr


def resample_features(features: np.ndarray, T: int) -> np.ndarray:
    """Linearly interpolate columns at positions ``i * (T_raw - 1) / (T - 1)``."""
    if T < 2:
        raise ConfigError(f"target length must be >= 2, got {T}")
    features = np.asarray(features)
    t_raw = features.shape[1]
    if t_raw == 1:
        return np.repeat(features, T, axis=1)
    pos = np.arange(T) * (t_raw - 1) / (T - 1)
    lo = np.clip(np.floor(pos).astype(int), 0, t_raw - 2)
    frac = pos - lo
    return features[:, lo] * (1.0 - frac) + features[:, lo + 1] * frac


# ---------------------------------------------------------------- targets


def snippet_span(seg: ActionSegment, duration: float, T: int) -> tuple[int, int]:
    """Half-open range [a, b) of snippets whose centers fall in [start, end)."""
    a = math.ceil(seg.start / duration * T - 0.5)
    b = math.ceil(seg.end / duration * T - 0.5)
    return max(a, 0), min(b, T)


def snippets_to_seconds(a: int, b: int, duration: float, T: int) -> tuple[float, float]:
    """Inclusive snippet run [a, b] to a time interval."""
    return a / T * duration, (b + 1) / T * duration


def make_targets(record: VideoRecord, T: int, K: int) -> TrainTargets:
    class_label = np.full(T, K, dtype=np.int64)
    owner = np.full(T, -1, dtype=np.int64)
    gt_mask = np.zeros((T, T), dtype=np.float32)
    order = sorted(range(len(record.segments)), key=lambda j: record.segments[j].start)
    spans = {}
    for j in order:
        seg = record.segments[j]
        a, b = snippet_span(seg, record.duration, T)
        spans[j] = (a, b)
        free = owner[a:b] < 0
        owner[a:b][free] = j
    for t in range(T):
        j = owner[t]
        if j >= 0:
            class_label[t] = record.segments[j].label
            a, b = spans[j]
            gt_mask[a:b, t] = 1.0
    fg = np.flatnonzero(class_label < K)
    bg = np.flatnonzero(class_label == K)
    return TrainTargets(class_label, gt_mask, fg, bg)


# ---------------------------------------------------------------- synthetic data


def _plant_segments(rng, cfg: SyntheticConfig, duration: float) -> list[ActionSegment]:
    """Non-overlapping segments aligned to the raw snippet grid."""
    n_raw = cfg.raw_length
    n = int(rng.integers(cfg.instances[0], cfg.instances[1] + 1))
    segments = []
    occupied = np.zeros(n_raw, dtype=bool)
    for _ in range(n):
        for _attempt in range(20):
            length = int(round(rng.uniform(*cfg.length_frac) * n_raw))
            length = min(max(length, 1), n_raw)
            a = int(rng.integers(0, n_raw - length + 1))
            # keep a gap of one raw snippet between instances
            lo, hi = max(a - 1, 0), min(a + length + 1, n_raw)
            if not occupied[lo:hi].any():
                occupied[a : a + length] = True
                label = int(rng.integers(0, cfg.num_classes))
                step = duration / n_raw
                segments.append(ActionSegment(a * step, (a + length) * step, label))
                break
    return sorted(segments, key=lambda s: s.start)


def _synthesize_features(rng, cfg, prototypes, background, segments, duration) -> np.ndarray:
    n_raw = cfg.raw_length
    dim = 2 * cfg.feature_half_dim
    shift = rng.normal(size=(dim, 1)) * cfg.video_shift * cfg.noise
    feats = np.repeat(background[:, None], n_raw, axis=1) + shift
    step = duration / n_raw
    for seg in segments:
        a = int(round(seg.start / step))
        b = int(round(seg.end / step))
        feats[:, a:b] = prototypes[seg.label][:, None] + shift
    feats = feats + rng.normal(size=feats.shape) * cfg.noise
    return feats.astype(np.float32)


def generate_synthetic(cfg: SyntheticConfig, seed: int, out_dir) -> DatasetSplit:
    """Write a deterministic synthetic dataset to ``out_dir`` and return its split.

    Each class has one fixed prototype; foreground snippets are prototype + noise,
    background snippets a shared background prototype + noise. A per-video
    offset (scaled by ``noise``) is added to all snippets of a video.
    Files: ``features/<id>.bin`` (+ ``.json`` header), ``annotations.json``
    (all videos, true labels) and ``manifest.json`` (split ids).
    """
    cfg.validate()
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    dim = 2 * cfg.feature_half_dim
    background = rng.normal(size=dim) * cfg.background_scale
    directions = rng.normal(size=(cfg.num_classes, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    prototypes = background + cfg.separation * math.sqrt(dim) * directions * 0.5
    classes = [f"action_{k:02d}" for k in range(cfg.num_classes)]

    records = []
    for i in range(cfg.num_videos + cfg.num_test):
        vid = f"v_{i:05d}"
        duration = round(float(rng.uniform(*cfg.duration)), 3)
        segments = _plant_segments(rng, cfg, duration)
        feats = _synthesize_features(rng, cfg, prototypes, background, segments, duration)
        rel = f"features/{vid}.bin"
        write_features(feats, out / rel)
        records.append(VideoRecord(vid, duration, segments, rel))

    train, test = records[: cfg.num_videos], records[cfg.num_videos :]
    n_labeled = max(1, int(round(cfg.label_fraction * len(train))))
    order = rng.permutation(len(train))
    labeled = [train[i] for i in sorted(order[:n_labeled])]
    unlabeled = [train[i] for i in sorted(order[n_labeled:])]

    dump_annotations(records, classes, out / "annotations.json")
    manifest = {
        "labeled": [r.id for r in labeled],
        "unlabeled": [r.id for r in unlabeled],
        "test": [r.id for r in test],
        "seed": seed,
        "fraction": cfg.label_fraction,
        "classes": classes,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    np.save(out / "prototypes.npy", np.vstack([prototypes, background[None]]).astype(np.float32))
    return DatasetSplit(labeled, [r.hidden() for r in unlabeled], test, classes, seed, cfg.label_fraction)


def load_split(root) -> DatasetSplit:
    """Rebuild a split from ``manifest.json`` + ``annotations.json``; unlabeled segments are hidden."""
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    records, classes = load_annotations(root / "annotations.json", manifest.get("classes"))
    by_id = {r.id: r for r in records}
    return DatasetSplit(
        [by_id[i] for i in manifest["labeled"]],
        [by_id[i].hidden() for i in manifest["unlabeled"]],
        [by_id[i] for i in manifest["test"]],
        classes,
        manifest.get("seed", 0),
        manifest.get("fraction", 1.0),
    )


@dataclass
class VideoSample:
    """A video prepared for the model: features resampled to the working length."""

    id: str
    duration: float
    features: np.ndarray  # (2d, T) float32
    targets: TrainTargets | None
    record: VideoRecord


def prepare(records: list[VideoRecord], root, T: int, K: int, with_targets: bool = True) -> list[VideoSample]:
    root = Path(root)
    out = []
    for r in records:
        feats = resample_features(read_features(root / r.feature_path), T).astype(np.float32)
        targets = make_targets(r, T, K) if with_targets else None
        out.append(VideoSample(r.id, r.duration, feats, targets, r))
    return out
