"""Experiment configuration: scene, model, and training sections.

Configs load from a single JSON document. Every field has a default; unknown
fields raise ConfigError. The desk preset is the default constructor; the
paper-scale preset mirrors the published full-scale dimensions and is shipped
untested at those sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, asdict
import json

from .errors import ConfigError

GROUPING_MODES = ("gumbel-hard", "soft-cross-attn", "none")


def _from_dict(cls, d: dict, section: str):
    if not isinstance(d, dict):
        raise ConfigError(f"config section {section!r} must be an object, got {type(d).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config field(s) in {section!r}: {sorted(unknown)}")
    kwargs = {}
    for f in fields(cls):
        if f.name in d:
            v = d[f.name]
            kwargs[f.name] = tuple(v) if isinstance(v, list) else v
    return cls(**kwargs)


@dataclass
class SceneConfig:
    """Synthetic scene generator settings."""

    height: int = 64
    width: int = 64
    num_categories: int = 4          # audio event categories K
    max_objects: int = 3
    off_screen_prob: float = 0.3     # chance of a sounding category with no visible emitter
    silent_prob: float = 0.3         # per-object chance of being visible but silent
    image_noise: float = 0.02
    audio_noise: float = 0.05
    min_extent: int = 10             # shape half-size / radius in pixels
    max_extent: int = 16

    def validate(self):
        if self.height % 32 or self.width % 32 or self.height <= 0 or self.width <= 0:
            raise ConfigError(f"image size {self.height}x{self.width} must be a positive multiple of 32")
        if self.num_categories < 1:
            raise ConfigError("num_categories must be >= 1")
        if not 1 <= self.max_objects <= self.num_categories:
            raise ConfigError("max_objects must be in [1, num_categories] (objects get distinct categories)")
        for name in ("off_screen_prob", "silent_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {p}")
        if not 1 <= self.min_extent <= self.max_extent:
            raise ConfigError("need 1 <= min_extent <= max_extent")
        if 2 * self.max_extent + 4 > min(self.height, self.width):
            raise ConfigError("max_extent too large for the image size")


@dataclass
class ModelConfig:
    """Network dimensions and architecture toggles."""

    num_queries: int = 16            # vision-derived queries N
    hidden_dim: int = 64             # shared query/feature width
    num_unit_repeats: int = 2        # decoder repeats D (block count = 4D + 1)
    num_heads: int = 4
    ffn_dim: int = 256
    stem_channels: int = 16
    encoder_channels: tuple = (32, 64, 128, 256)   # stub backbone C2..C5
    audio_len: int = 8               # audio feature rows S (paper-scale uses 24)
    audio_dim: int = 32              # audio feature channels
    grouping: str = "gumbel-hard"    # gumbel-hard | soft-cross-attn | none
    gumbel_tau: float = 1.0
    gumbel_at_eval: bool = False
    use_prototypes: bool = True
    use_pac_loss: bool = True
    use_act_baseline: bool = False   # audio-derived-query baseline instead of vision-derived
    aux_losses: bool = True

    def validate(self):
        if self.hidden_dim % self.num_heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} must be divisible by num_heads {self.num_heads}")
        if self.hidden_dim % 4:
            raise ConfigError("hidden_dim must be divisible by 4 (2-D sinusoidal positions)")
        if self.grouping not in GROUPING_MODES:
            raise ConfigError(f"grouping must be one of {GROUPING_MODES}, got {self.grouping!r}")
        if len(self.encoder_channels) != 4:
            raise ConfigError("encoder_channels must list exactly four stage widths (V2..V5)")
        if self.gumbel_tau <= 0:
            raise ConfigError("gumbel_tau must be positive")
        if self.num_unit_repeats < 0:
            raise ConfigError("num_unit_repeats must be >= 0")
        for name in ("num_queries", "hidden_dim", "num_heads", "ffn_dim", "stem_channels",
                     "audio_len", "audio_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    iterations: int = 2000
    batch_size: int = 4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_cls: float = 2.0
    lambda_mask: float = 5.0
    lambda_pac: float = 1.0
    no_object_weight: float = 0.1
    log_every: int = 25
    eval_every: int = 250
    checkpoint_every: int = 0        # 0 disables periodic checkpoints

    def validate(self):
        for name in ("learning_rate", "batch_size", "lambda_cls", "lambda_mask",
                     "lambda_pac", "no_object_weight", "log_every", "eval_every"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")


@dataclass
class ExperimentConfig:
    seed: int = 7
    scene: SceneConfig = field(default_factory=SceneConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self):
        self.scene.validate()
        self.model.validate()
        self.train.validate()
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"]["encoder_channels"] = list(self.model.encoder_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - {"seed", "scene", "model", "train"}
        if unknown:
            raise ConfigError(f"unknown top-level config field(s): {sorted(unknown)}")
        cfg = cls(
            seed=d.get("seed", 7),
            scene=_from_dict(SceneConfig, d.get("scene", {}), "scene"),
            model=_from_dict(ModelConfig, d.get("model", {}), "model"),
            train=_from_dict(TrainConfig, d.get("train", {}), "train"),
        )
        return cfg.validate()

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        return cls.from_dict(d)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def desk_preset() -> ExperimentConfig:
    """Small dimensions tuned to train on a laptop-class CPU in minutes."""
    return ExperimentConfig().validate()


def paper_scale_preset() -> ExperimentConfig:
    """Published full-scale dimensions (untested targets at this desk harness)."""
    cfg = ExperimentConfig(
        scene=SceneConfig(height=224, width=224),
        model=ModelConfig(
            num_queries=100,
            hidden_dim=256,
            ffn_dim=1024,
            num_unit_repeats=2,
            encoder_channels=(64, 128, 256, 512),
            audio_len=24,
            audio_dim=128,
        ),
        train=TrainConfig(iterations=45000, batch_size=16),
    )
    return cfg.validate()
