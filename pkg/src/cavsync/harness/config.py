"""Run configuration: one flat, JSON-serializable record validated up front."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace

from ..errors import ConfigurationError
from ..model import ModelConfig
from ..objectives import OptimizerConfig, TrainConfig
from .synthetic import SyntheticConfig

TASKS = ("retrieve", "classify", "localize", "segment")


@dataclass
class RunConfig:
    # architecture
    dim: int = 64
    heads: int = 4
    encoder_depth: int = 2
    decoder_dim: int = 32
    decoder_depth: int = 2
    decoder_heads: int = 4
    patch: int = 8
    n_registers: int = 8
    use_global: bool = True
    # objectives
    mask_ratio_a: float = 0.75
    mask_ratio_v: float = 0.75
    temperature: float = 0.05
    lambda_c: float = 0.1
    lambda_r: float = 1.0
    direction: str = "symmetric"
    recon_normalization: str = "element"
    # optimizer
    lr: float = 1e-3
    weight_decay: float = 5e-7
    beta1: float = 0.95
    beta2: float = 0.999
    warmup_frac: float = 0.1
    batch_size: int = 16
    epochs: int = 50
    seed: int = 0
    # data
    num_videos: int = 256
    eval_videos: int = 64
    T: int = 16
    S: int = 128
    s_length: int = 32
    mel_bins: int = 32
    frame_size: int = 32
    num_latent_classes: int = 8
    rho: float = 1.0
    events_per_video: int = 2
    noise_std: float = 0.1
    template_seed: int = 0
    # evaluation
    task: str = "retrieve"
    probe_source: str = "global"
    modality_select: str = "both"
    probe_epochs: int = 30
    probe_lr: float = 1e-3
    segment_modality: str = "audio"
    iou_threshold: float | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigurationError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2 (contrastive negatives)")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.eval_videos < 2:
            raise ConfigurationError("eval_videos must be >= 2")
        if self.probe_source not in ("global", "register_mean", "patch_mean"):
            raise ConfigurationError(f"unknown probe_source {self.probe_source!r}")
        if self.modality_select not in ("audio", "visual", "both"):
            raise ConfigurationError(f"unknown modality_select {self.modality_select!r}")
        if self.segment_modality not in ("audio", "visual", "both"):
            raise ConfigurationError(f"unknown segment_modality {self.segment_modality!r}")
        if self.probe_source == "register_mean" and self.n_registers == 0:
            raise ConfigurationError("probe_source=register_mean needs n_registers > 0")
        self.model_config()
        self.train_config()
        self.synthetic_config()

    def model_config(self) -> ModelConfig:
        return ModelConfig(dim=self.dim, heads=self.heads, encoder_depth=self.encoder_depth,
                           decoder_dim=self.decoder_dim, decoder_depth=self.decoder_depth,
                           decoder_heads=self.decoder_heads, patch=self.patch,
                           mel_bins=self.mel_bins, s_length=self.s_length,
                           frame_size=self.frame_size, n_registers=self.n_registers,
                           use_global=self.use_global)

    def train_config(self) -> TrainConfig:
        return TrainConfig(mask_ratio_a=self.mask_ratio_a, mask_ratio_v=self.mask_ratio_v,
                           temperature=self.temperature, lambda_c=self.lambda_c,
                           lambda_r=self.lambda_r, direction=self.direction,
                           recon_normalization=self.recon_normalization)

    def optimizer_config(self, total_steps: int) -> OptimizerConfig:
        return OptimizerConfig(lr=self.lr, weight_decay=self.weight_decay, beta1=self.beta1,
                               beta2=self.beta2, warmup_frac=self.warmup_frac,
                               total_steps=max(total_steps, 1))

    def synthetic_config(self, split: str = "train") -> SyntheticConfig:
        if split not in ("train", "eval"):
            raise ConfigurationError(f"split must be 'train' or 'eval', got {split!r}")
        return SyntheticConfig(
            num_videos=self.num_videos if split == "train" else self.eval_videos,
            T=self.T, S=self.S, s_length=self.s_length,
            num_latent_classes=self.num_latent_classes, rho=self.rho,
            events_per_video=self.events_per_video, noise_std=self.noise_std,
            seed=self.seed if split == "train" else self.seed + 100_003,
            template_seed=self.template_seed, frame_size=self.frame_size,
            mel_bins=self.mel_bins)

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError(f"config {path} must hold a JSON object")
        return cls.from_dict(data)

    def override(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    @classmethod
    def faithful(cls, **overrides) -> "RunConfig":
        """Full-resolution architecture: 128x416 spectrogram windows, 224x224 frames, p=16."""
        base = dict(dim=768, heads=12, encoder_depth=11, decoder_dim=384, decoder_depth=2,
                    decoder_heads=12, patch=16, S=1024, s_length=416, mel_bins=128,
                    frame_size=224, lr=2e-4, batch_size=512, epochs=25)
        base.update(overrides)
        return cls(**base)
