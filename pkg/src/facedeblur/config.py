"""Dataclass configs, JSON round-tripping, dotted-key overrides and presets.

Every run is driven by a single ``Config`` (model + data + train sections).
``config_hash`` fingerprints the architecture-relevant part so checkpoints
can refuse to load into a mismatched model.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

OFFSET_MODES = ("foc", "plain")
FUSION_MODES = ("late", "early")
MOTION_KINDS = ("translate", "rotate", "landmark-face")


@dataclass
class ModelConfig:
    """Architecture hyperparameters for the dual-branch deblurring network."""

    width: int = 32                 # feature channels at the finest level
    num_landmarks: int = 68
    heatmap_sigma: float = 3.0      # px, at full resolution
    num_extract_blocks: int = 3
    num_fusion_blocks: int = 2
    num_reconstruct_blocks: int = 3
    foc_width: int = 32             # guided offset estimator, finest level
    foc_width_simple: int = 16      # simplified estimator, coarse levels
    foc_depth: int = 2
    use_heatmaps: bool = True
    offset_mode: str = "foc"        # "foc" | "plain" (two-conv baseline)
    fusion: str = "late"            # "late" | "early"
    interp_frames: int = 3          # 3 | 4 frames per interpolation direction
    combine_width: int = 32
    combine_blocks: int = 9
    stage1_width: int = 16          # pre-deblurring model channels

    def validate(self):
        if self.offset_mode not in OFFSET_MODES:
            raise ConfigError(f"offset_mode must be one of {OFFSET_MODES}, got {self.offset_mode!r}")
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")
        if self.interp_frames not in (3, 4):
            raise ConfigError(f"interp_frames must be 3 or 4, got {self.interp_frames}")
        if self.width < 1 or self.num_landmarks < 1:
            raise ConfigError("width and num_landmarks must be positive")
        if self.heatmap_sigma <= 0:
            raise ConfigError("heatmap_sigma must be positive")
        if self.foc_depth < 1:
            raise ConfigError("foc_depth must be >= 1")


@dataclass
class DataConfig:
    """Synthetic corpus layout and degradation parameters."""

    root: str = "data"
    frame_size: int = 64            # square frames, divisible by 4
    frames_per_video: int = 12
    videos_train: int = 8
    videos_val: int = 2
    videos_test: int = 4
    motion_kinds: tuple = MOTION_KINDS
    max_shift: float = 1.5          # px/frame for translation motion
    max_degrees: float = 3.0        # deg/frame for rotation motion
    blur_min_length: float = 0.0
    blur_max_length: float = 9.0
    blur_max_segments: int = 3
    blur_smooth_sigma: float = 0.7  # upper bound of smoothing sigma range
    blur_strength: float = 1.0
    noise_sigma: float = 0.005
    seed: int = 0

    def validate(self):
        if self.frame_size % 4 != 0:
            raise ConfigError(f"frame_size must be divisible by 4, got {self.frame_size}")
        if self.frames_per_video < 5:
            raise ConfigError("frames_per_video must be >= 5")
        for kind in self.motion_kinds:
            if kind not in MOTION_KINDS:
                raise ConfigError(f"unknown motion kind {kind!r}")


@dataclass
class TrainConfig:
    """Optimization settings (defaults follow the reference recipe)."""

    steps: int = 2000
    batch_size: int = 12
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    grad_clip: float = 10.0
    lr_schedule: str = "constant"   # "constant" | "cosine"
    log_every: int = 50
    val_every: int = 500
    patience: int = 10              # validations without improvement
    val_max_windows: int = 64
    seed: int = 0
    checkpoint_dir: str = "checkpoints"

    def validate(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be positive")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.log_every < 1 or self.val_every < 1:
            raise ConfigError("log_every and val_every must be positive")


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self):
        self.model.validate()
        self.data.validate()
        self.train.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def config_from_dict(d: dict) -> Config:
    cfg = Config()
    for section_name in ("model", "data", "train"):
        section = getattr(cfg, section_name)
        for key, value in d.get(section_name, {}).items():
            if not hasattr(section, key):
                raise ConfigError(f"unknown config key {section_name}.{key}")
            if key == "motion_kinds":
                value = tuple(value)
            setattr(section, key, value)
    cfg.validate()
    return cfg


def load_config(path) -> Config:
    try:
        with open(path) as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    return config_from_dict(raw)


def save_config(cfg: Config, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2, default=list)
        f.write("\n")


def apply_overrides(cfg: Config, overrides: list[str]) -> Config:
    """Apply ``section.key=value`` strings, coercing to the field's type."""
    cfg = config_from_dict(cfg.to_dict())  # work on a copy
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        dotted, raw = item.split("=", 1)
        parts = dotted.split(".")
        if len(parts) != 2:
            raise ConfigError(f"override key {dotted!r} must be section.key")
        section_name, key = parts
        if section_name not in ("model", "data", "train"):
            raise ConfigError(f"unknown config section {section_name!r}")
        section = getattr(cfg, section_name)
        if not hasattr(section, key):
            raise ConfigError(f"unknown config key {dotted}")
        current = getattr(section, key)
        try:
            if isinstance(current, bool):
                if raw.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(raw)
                value = raw.lower() in ("true", "1")
            elif isinstance(current, int):
                value = int(raw)
            elif isinstance(current, float):
                value = float(raw)
            elif isinstance(current, tuple):
                value = tuple(s.strip() for s in raw.split(","))
            else:
                value = raw
        except ValueError:
            raise ConfigError(f"cannot parse {raw!r} for {dotted} (expected {type(current).__name__})")
        setattr(section, key, value)
    cfg.validate()
    return cfg


PRESETS = ("no-foc", "no-landmarks", "early-fusion", "four-frame")


def apply_preset(cfg: Config, preset: str) -> Config:
    """Ablation presets are pure config transformations, not code paths."""
    cfg = config_from_dict(cfg.to_dict())
    if preset == "no-foc":
        cfg.model.offset_mode = "plain"
        cfg.model.use_heatmaps = False
    elif preset == "no-landmarks":
        cfg.model.use_heatmaps = False
    elif preset == "early-fusion":
        cfg.model.fusion = "early"
    elif preset == "four-frame":
        cfg.model.interp_frames = 4
    else:
        raise ConfigError(f"unknown preset {preset!r}; choose from {PRESETS}")
    cfg.validate()
    return cfg


def config_hash(model_cfg: ModelConfig) -> str:
    """Stable fingerprint of the architecture section of a config."""
    canonical = json.dumps(dataclasses.asdict(model_cfg), sort_keys=True, default=list)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
