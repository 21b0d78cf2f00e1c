"""Experiment configuration: dataclasses, JSON round trip, validation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field


class ConfigError(ValueError):
    pass


@dataclass
class SceneConfig:
    samples: int = 320
    noise_sigma: float = 0.002
    cull_fraction: float = 0.3
    occluder_fraction: float = 0.0
    box_center: list = field(default_factory=lambda: [0.0, 0.0, 0.8])
    box_extent: list = field(default_factory=lambda: [0.1, 0.1, 0.1])
    seed: int = 0

    def validate(self):
        if self.samples < 1:
            raise ConfigError("samples must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        for name in ("cull_fraction", "occluder_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {v}")
        if len(self.box_center) != 3 or len(self.box_extent) != 3:
            raise ConfigError("translation box needs 3-vector center and extent")


@dataclass
class EmbedConfig:
    n_initial_centers: int = 256
    k_neighbors: list = field(default_factory=lambda: [16, 8])
    widths: list = field(default_factory=lambda: [64, 64])
    downsample_factors: list = field(default_factory=lambda: [4, 2])
    pool: str = "max"
    include_self: bool = False

    @property
    def d_in(self):
        return self.widths[-1]

    @property
    def final_centers(self):
        n = self.n_initial_centers
        for f in self.downsample_factors:
            n = -(-n // f)
        return n

    def validate(self):
        if len(self.k_neighbors) != len(self.widths) or len(self.widths) != len(self.downsample_factors):
            raise ConfigError("k_neighbors, widths, downsample_factors must have equal length")
        if any(w <= 0 for w in self.widths) or any(k <= 0 for k in self.k_neighbors):
            raise ConfigError("widths and k_neighbors must be positive")
        if any(f < 1 for f in self.downsample_factors):
            raise ConfigError("downsample factors must be >= 1")
        if self.final_centers < 1:
            raise ConfigError("configuration leaves no centers")
        if self.pool not in ("max", "mean"):
            raise ConfigError(f"unknown pool kind {self.pool!r}")


@dataclass
class EncoderConfig:
    layers: int = 3
    heads: int = 4
    d_in: int = 64
    k_f: int = 8
    ff_width: int = 256

    def validate(self):
        if self.d_in % self.heads != 0:
            raise ConfigError(f"d_in={self.d_in} not divisible by heads={self.heads}")
        if self.layers < 0 or self.k_f < 1 or self.ff_width < 1:
            raise ConfigError("encoder counts must be positive")


@dataclass
class TrainConfig:
    steps: int = 2000
    batch: int = 8
    lr: float = 3e-3
    n_loss_points: int = 64
    augment: bool = False

    def validate(self):
        if self.steps < 0 or self.batch < 1 or self.lr <= 0 or self.n_loss_points < 1:
            raise ConfigError("invalid training config")


@dataclass
class AblationConfig:
    gcn_block: str = "gcn"          # "gcn" | "plainconv"
    geometry_aware: str = "on"      # "on" | "off"

    def validate(self):
        if self.gcn_block not in ("gcn", "plainconv"):
            raise ConfigError(f"gcn_block must be gcn|plainconv, got {self.gcn_block!r}")
        if self.geometry_aware not in ("on", "off"):
            raise ConfigError(f"geometry_aware must be on|off, got {self.geometry_aware!r}")


@dataclass
class ExperimentConfig:
    seed: int = 0
    model: str = "lbracket"
    head_widths: list = field(default_factory=lambda: [128, 64])
    scene: SceneConfig = field(default_factory=SceneConfig)
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def validate(self):
        self.scene.validate()
        self.embed.validate()
        self.encoder.validate()
        self.train.validate()
        self.ablation.validate()
        if self.encoder.d_in != self.embed.d_in:
            raise ConfigError("encoder d_in must equal embedding width")
        if any(w < 1 for w in self.head_widths):
            raise ConfigError("head widths must be positive")

    def to_json(self):
        return json.dumps(asdict(self), indent=2)

    @staticmethod
    def from_json(text):
        raw = json.loads(text)
        return ExperimentConfig(
            seed=raw.get("seed", 0),
            model=raw.get("model", "lbracket"),
            head_widths=list(raw.get("head_widths", [128, 64])),
            scene=SceneConfig(**raw.get("scene", {})),
            embed=EmbedConfig(**raw.get("embed", {})),
            encoder=EncoderConfig(**raw.get("encoder", {})),
            train=TrainConfig(**raw.get("train", {})),
            ablation=AblationConfig(**raw.get("ablation", {})),
        )

    @staticmethod
    def load(path):
        with open(path) as f:
            cfg = ExperimentConfig.from_json(f.read())
        cfg.validate()
        return cfg

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.to_json() + "\n")
