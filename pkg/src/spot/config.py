"""Run configuration: nested dataclasses, presets, and strict JSON loading."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class SyntheticConfig:
    num_videos: int = 200
    num_test: int = 50
    num_classes: int = 5
    raw_length: int = 120
    feature_half_dim: int = 16
    instances: tuple[int, int] = (1, 3)
    length_frac: tuple[float, float] = (0.12, 0.3)
    duration: tuple[float, float] = (60.0, 180.0)
    noise: float = 1.0
    # per-video shift of all snippet features, in units of `noise`
    video_shift: float = 0.5
    # distance between class prototypes and the background prototype
    separation: float = 1.0
    # scale of the background prototype; near 0 gives low-energy background
    # snippets, like post-activation backbone features
    background_scale: float = 1.0
    label_fraction: float = 0.1

    def validate(self):
        if not 0.0 < self.label_fraction <= 1.0:
            raise ConfigError(f"label fraction must lie in (0, 1], got {self.label_fraction}")
        if self.num_classes < 1 or self.raw_length < 1 or self.feature_half_dim < 1:
            raise ConfigError("num_classes, raw_length and feature_half_dim must be >= 1")
        lo, hi = self.instances
        if not 0 <= lo <= hi:
            raise ConfigError(f"bad instance range {self.instances}")
        if not 0.0 < self.length_frac[0] <= self.length_frac[1] <= 1.0:
            raise ConfigError(f"bad length fraction range {self.length_frac}")
        if self.noise < 0:
            raise ConfigError("noise must be nonnegative")


@dataclass
class EncoderConfig:
    dim: int = 256
    heads: int = 4
    layers: int = 3
    ff_dim: int = 512
    dropout: float = 0.1
    proj_m_dim: int = 128
    proj_p_dim: int = 128
    proj_m_kernel: int = 3
    proj_p_kernel: int = 1
    # "none" | "learnable" | "fixed"
    positional: str = "none"
    # "relational" | "channels"
    mask_head: str = "relational"

    def validate(self):
        if self.dim % self.heads:
            raise ConfigError(f"embedding dim {self.dim} not divisible by heads {self.heads}")
        if min(self.dim, self.heads, self.layers, self.proj_m_dim, self.proj_p_dim) < 1:
            raise ConfigError("encoder dimensions must be >= 1")
        if self.proj_m_dim != self.proj_p_dim:
            raise ConfigError("refinement compares E_m and E_p columns; their dims must match")
        if self.positional not in ("none", "learnable", "fixed"):
            raise ConfigError(f"unknown positional encoding {self.positional!r}")
        if self.mask_head not in ("relational", "channels"):
            raise ConfigError(f"unknown mask head {self.mask_head!r}")


@dataclass
class RefineConfig:
    mask_threshold: float = 0.7
    class_threshold: float = 0.3
    erosion_kernel: int = 7
    top_k: int = 40
    temperature: float = 0.07
    mode: str = "infonce"
    margin: float = 0.5
    soft_beta: float = 0.05
    # route the eroded interior to X_bg and the boundary band to X_fg instead
    flip_regions: bool = False
    fg_term: bool = True
    bg_term: bool = True

    def validate(self):
        for name in ("mask_threshold", "class_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if self.erosion_kernel < 3 or self.erosion_kernel % 2 == 0:
            raise ConfigError(f"erosion kernel must be odd and >= 3, got {self.erosion_kernel}")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if self.mode not in ("infonce", "margin-triplet"):
            raise ConfigError(f"unknown refinement mode {self.mode!r}")


@dataclass
class LossConfig:
    tau: float = 1.1
    tau_mask: float = 0.7
    dice_weight: float = 0.6
    standard_dice: bool = False
    tail_fraction: float = 0.3
    pretext_rec_weight: float = 0.8
    pretext_tp_weight: float = 0.4
    use_ref: bool = True
    use_rec: bool = True
    # reduce each pseudo mask column to the run the decoder would pick for its anchor
    pseudo_mask_run: bool = True
    # pretext mask target: True = only anchors inside the planted span predict it,
    # False = every anchor column predicts the planted indicator
    pretext_anchor_targets: bool = False

    def validate(self):
        if self.tau < 1.0:
            raise ConfigError(f"tau must be >= 1, got {self.tau}")
        if self.tau_mask <= 0:
            raise ConfigError("tau_mask must be > 0")
        if self.dice_weight < 0 or self.pretext_rec_weight < 0 or self.pretext_tp_weight < 0:
            raise ConfigError("loss weights must be nonnegative")


@dataclass
class DecodeConfig:
    class_threshold: float = 0.3
    mask_thresholds: tuple[float, ...] = tuple(round(0.1 * i, 1) for i in range(1, 10))
    top_snippets: int = 100
    nms_threshold: float = 0.6
    nms_sigma: float = 0.5
    max_outputs: int = 100

    def validate(self):
        if not self.mask_thresholds or not all(0 < t < 1 for t in self.mask_thresholds):
            raise ConfigError(f"mask thresholds must be a nonempty subset of (0, 1)")
        if self.nms_sigma <= 0:
            raise ConfigError("nms_sigma must be > 0")


@dataclass
class EvalConfig:
    tiou_grid: tuple[float, ...] = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

    def validate(self):
        g = self.tiou_grid
        if not g or not all(0 < t < 1 for t in g) or any(b <= a for a, b in zip(g, g[1:])):
            raise ConfigError(f"tIoU grid must be strictly increasing in (0, 1): {g}")


@dataclass
class TrainConfig:
    temporal_length: int = 100
    pretrain_epochs: int = 12
    finetune_epochs: int = 15
    warmup_epochs: int = 3
    lr: float = 1e-4
    pretrain_lr: float = 1e-4
    weight_decay: float = 1e-3
    batch_size: int = 8
    # None: one pass over the larger of the labeled / unlabeled sets
    steps_per_epoch: int | None = None
    pretrain_steps_per_epoch: int | None = None
    fg_frac: tuple[float, float] = (0.2, 0.8)
    grad_clip: float = 5.0

    def validate(self):
        if self.temporal_length < 2:
            raise ConfigError("temporal_length must be >= 2")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (labeled and unlabeled halves)")
        if not 0 < self.fg_frac[0] <= self.fg_frac[1] <= 1:
            raise ConfigError(f"bad foreground fraction range {self.fg_frac}")


@dataclass
class RunConfig:
    preset: str = "large"
    seed: int = 0
    data: SyntheticConfig = field(default_factory=SyntheticConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> "RunConfig":
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if hasattr(v, "validate"):
                v.validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def _build(cls, raw: dict, where: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        default = getattr(cls(), name)
        if dataclasses.is_dataclass(default):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}.{name} must be an object")
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        elif isinstance(default, tuple) and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def from_dict(raw: dict, base: RunConfig | None = None) -> RunConfig:
    """Overlay ``raw`` onto ``base`` (default: large preset), rejecting unknown keys."""
    merged = base.to_dict() if base is not None else RunConfig().to_dict()
    _merge(merged, raw, "config")
    return _build(RunConfig, merged, "config").validate()


def _merge(dst: dict, src: dict, where: str):
    for k, v in src.items():
        if k not in dst:
            raise ConfigError(f"unknown keys in {where}: ['{k}']")
        if isinstance(dst[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{where}.{k} must be an object")
            _merge(dst[k], v, f"{where}.{k}")
        else:
            dst[k] = v


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if "preset" in raw and base is None:
        base = preset(raw["preset"])
    return from_dict(raw, base)


def preset(name: str) -> RunConfig:
    """Ship-with presets. ``large``/``small`` mirror the two benchmark regimes."""
    if name == "large":
        cfg = RunConfig(preset="large")
    elif name == "small":
        cfg = RunConfig(
            preset="small",
            decode=DecodeConfig(nms_threshold=0.4),
            eval=EvalConfig(tiou_grid=(0.3, 0.4, 0.5, 0.6, 0.7)),
            train=TrainConfig(temporal_length=256, lr=1e-5, pretrain_lr=1e-5, weight_decay=1e-5),
        )
    elif name == "toy":
        cfg = RunConfig(
            preset="toy",
            data=SyntheticConfig(background_scale=0.0),
            encoder=EncoderConfig(
                dim=32, heads=4, layers=2, ff_dim=64, dropout=0.1, proj_m_dim=32, proj_p_dim=32
            ),
            train=TrainConfig(
                temporal_length=100,
                pretrain_epochs=12,
                finetune_epochs=20,
                warmup_epochs=10,
                lr=1e-3,
                pretrain_lr=1e-4,
                weight_decay=1e-3,
                batch_size=8,
                steps_per_epoch=30,
                pretrain_steps_per_epoch=30,
            ),
        )
    else:
        raise ConfigError(f"unknown preset {name!r}")
    return cfg.validate()
