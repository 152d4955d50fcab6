"""Run configuration using Pydantic Settings.

Values resolve in this order (highest first): CLI overrides, config file,
``A3GN_*`` environment variables, defaults. Config files are flat
``key=value`` dotenv files; the resolved settings are echoed back in the same
format so a run can be replayed from its output directory.
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional

import torch
from dotenv import dotenv_values
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from a3gn.errors import ConfigurationError

LATENT_DIM = 7

# Fields that do not influence any produced artifact.
_RUNTIME_FIELDS = {"log_level", "log_every"}

PairProtocol = Literal["A->A", "A->A'"]


class LossWeights(BaseModel):
    """Weights of the composite objectives."""

    lambda_rec: float = Field(10.0, ge=0)
    lambda_cos: float = Field(10.0, ge=0)
    lambda_gp: float = Field(10.0, ge=0)
    lambda_kl: float = Field(0.0, ge=0)


class AblationConfig(BaseModel):
    """Attention toggles; each inserts or removes its blocks only."""

    geometric_attention: bool = True
    channel_attention: bool = True

    @property
    def variant(self) -> str:
        if self.geometric_attention and self.channel_attention:
            return "both"
        if self.geometric_attention:
            return "geometric"
        if self.channel_attention:
            return "channel"
        return "baseline"


class ModelConfig(BaseModel):
    """Widths and depths of the four attack networks."""

    image_size: int = Field(32, ge=11)
    base_channels: int = Field(16, ge=1)
    encoder_channels: int = Field(16, ge=2)
    critic_channels: int = Field(16, ge=1)
    critic_layers: int = Field(4, ge=1)
    residual_blocks: int = Field(6, ge=0)
    se_reduction: int = Field(2, ge=1)
    ablation: AblationConfig = Field(default_factory=AblationConfig)


class EmbedderConfig(BaseModel):
    """Reference embedding network and its softmax training run."""

    image_size: int = Field(32, ge=8)
    depth: int = Field(3, ge=1)
    width: int = Field(32, ge=1)
    kernel_size: int = Field(3, ge=1)
    embedding_dim: int = Field(64, ge=2)
    epochs: int = Field(15, ge=1)
    batch_size: int = Field(50, ge=1)
    lr: float = Field(1e-3, gt=0)
    holdout_fraction: float = Field(0.2, gt=0, lt=1)
    seed: int = 0

    @field_validator("kernel_size")
    @classmethod
    def _odd_kernel(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError("kernel_size must be odd")
        return value


class TrainConfig(BaseModel):
    """Attack training schedule and optimizer settings."""

    total_iters: int = Field(5000, gt=0)
    batch_size: int = Field(16, ge=1)
    lr0: float = Field(1e-4, gt=0)
    adam_beta1: float = Field(0.5, ge=0, lt=1)
    adam_beta2: float = Field(0.999, gt=0, lt=1)
    n_critic: int = Field(5, ge=1)
    weights: LossWeights = Field(default_factory=LossWeights)
    image_size: int = 32
    seed: int = 0
    ablation: AblationConfig = Field(default_factory=AblationConfig)
    latent_sampling: bool = True
    checkpoint_every: Optional[int] = Field(None, ge=1)
    log_every: int = Field(100, ge=1)

    @field_validator("total_iters")
    @classmethod
    def _even_total(cls, value: int) -> int:
        if value % 2:
            raise ValueError("total_iters must be even (two-phase learning-rate schedule)")
        return value

    @property
    def checkpoint_interval(self) -> int:
        if self.checkpoint_every is not None:
            return self.checkpoint_every
        return max(self.total_iters // 10, 100)


class EvalConfig(BaseModel):
    """Attack evaluation thresholds and pairing protocol."""

    match_threshold: float = Field(0.45, ge=-1, le=1)
    ssim_threshold: float = Field(0.9, ge=-1, le=1)
    batch_size: int = Field(50, ge=1)
    protocol: Literal["A->A", "A->A'", "both"] = "both"
    canonical_index: int = Field(0, ge=0)
    exclude_target: bool = True
    probe_count: Optional[int] = Field(None, ge=1)

    @property
    def protocols(self) -> tuple:
        if self.protocol == "both":
            return ("A->A", "A->A'")
        return (self.protocol,)


class Settings(BaseSettings):
    """Flat run settings; every field can be set from file, env or CLI."""

    model_config = SettingsConfigDict(env_prefix="A3GN_", case_sensitive=False, extra="forbid")

    # Run
    seed: int = 0
    log_level: str = "INFO"
    precision: Literal["float32", "float64"] = "float32"

    # Data
    data_dir: Optional[Path] = None
    synth: bool = False
    synth_identities: int = 10
    synth_per_identity: int = 50
    image_size: int = 32
    target_identity: int = 0
    target_count: int = 7
    holdout_per_identity: int = 12
    probe_count: int = 100

    # Model
    base_channels: int = 16
    encoder_channels: int = 16
    critic_channels: int = 16
    critic_layers: int = 4
    residual_blocks: int = 6
    se_reduction: int = 2
    geometric_attention: bool = True
    channel_attention: bool = True

    # Embedder
    embedding_dim: int = 64
    embedder_depth: int = 3
    embedder_width: int = 32
    embedder_kernel: int = 3
    embedder_epochs: int = 15
    embedder_batch_size: int = 50
    embedder_lr: float = 1e-3
    embedder_holdout: float = 0.2

    # Training
    total_iters: int = 5000
    batch_size: int = 16
    lr0: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    n_critic: int = 5
    lambda_rec: float = 10.0
    lambda_cos: float = 10.0
    lambda_gp: float = 10.0
    lambda_kl: float = 0.0
    latent_sampling: bool = True
    checkpoint_every: Optional[int] = None
    log_every: int = 100

    # Evaluation
    match_threshold: float = 0.45
    ssim_threshold: float = 0.9
    eval_batch_size: int = 50
    protocol: Literal["A->A", "A->A'", "both"] = "both"
    canonical_index: int = 0
    exclude_target: bool = True

    @model_validator(mode="after")
    def _check_counts(self) -> "Settings":
        if self.synth_identities < 2:
            raise ValueError("synth_identities must be at least 2")
        if self.target_count < 1:
            raise ValueError("target_count must be at least 1")
        return self

    @property
    def dtype(self) -> torch.dtype:
        return torch.float64 if self.precision == "float64" else torch.float32

    @property
    def ablation(self) -> AblationConfig:
        return AblationConfig(
            geometric_attention=self.geometric_attention,
            channel_attention=self.channel_attention,
        )

    def network_settings(self) -> ModelConfig:
        return _build(
            ModelConfig,
            image_size=self.image_size,
            base_channels=self.base_channels,
            encoder_channels=self.encoder_channels,
            critic_channels=self.critic_channels,
            critic_layers=self.critic_layers,
            residual_blocks=self.residual_blocks,
            se_reduction=self.se_reduction,
            ablation=self.ablation,
        )

    def embedder_settings(self) -> EmbedderConfig:
        return _build(
            EmbedderConfig,
            image_size=self.image_size,
            depth=self.embedder_depth,
            width=self.embedder_width,
            kernel_size=self.embedder_kernel,
            embedding_dim=self.embedding_dim,
            epochs=self.embedder_epochs,
            batch_size=self.embedder_batch_size,
            lr=self.embedder_lr,
            holdout_fraction=self.embedder_holdout,
            seed=self.seed,
        )

    def train_settings(self) -> TrainConfig:
        return _build(
            TrainConfig,
            total_iters=self.total_iters,
            batch_size=self.batch_size,
            lr0=self.lr0,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            n_critic=self.n_critic,
            weights=LossWeights(
                lambda_rec=self.lambda_rec,
                lambda_cos=self.lambda_cos,
                lambda_gp=self.lambda_gp,
                lambda_kl=self.lambda_kl,
            ),
            image_size=self.image_size,
            seed=self.seed,
            ablation=self.ablation,
            latent_sampling=self.latent_sampling,
            checkpoint_every=self.checkpoint_every,
            log_every=self.log_every,
        )

    def eval_settings(self) -> EvalConfig:
        return _build(
            EvalConfig,
            match_threshold=self.match_threshold,
            ssim_threshold=self.ssim_threshold,
            batch_size=self.eval_batch_size,
            protocol=self.protocol,
            canonical_index=self.canonical_index,
            exclude_target=self.exclude_target,
            probe_count=self.probe_count,
        )


def _build(model: type, **values: Any) -> Any:
    try:
        return model(**values)
    except ValidationError as exc:
        raise ConfigurationError(_describe(exc)) from exc


def _describe(exc: ValidationError) -> str:
    parts = []
    for error in exc.errors():
        location = ".".join(str(p) for p in error["loc"]) or "settings"
        parts.append(f"{location}: {error['msg']}")
    return "; ".join(parts)


def normalize_key(key: str) -> str:
    """Map ``--Some-Key`` / ``SOME_KEY`` spellings onto field names."""
    return key.strip().lstrip("-").replace("-", "_").lower()


def load_settings(
    config_path: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> Settings:
    """Resolve settings from an optional dotenv file plus explicit overrides.

    Raises:
        ConfigurationError: missing file, unknown key or invalid value
    """
    values: Dict[str, Any] = {}
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        for key, value in dotenv_values(path).items():
            if value is not None and value != "":
                values[normalize_key(key)] = value
    for key, value in (overrides or {}).items():
        if value is not None:
            values[normalize_key(key)] = value

    try:
        return Settings(**values)
    except ValidationError as exc:
        raise ConfigurationError(_describe(exc)) from exc


def settings_lines(settings: Settings) -> list:
    lines = []
    for name, value in settings.model_dump(mode="json").items():
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{name}={value}")
    return lines


def echo_settings(settings: Settings, out_dir: Path) -> Path:
    """Write the resolved settings as ``config.env`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.env"
    path.write_text("\n".join(settings_lines(settings)) + "\n", encoding="utf-8")
    return path


def config_hash(*parts: BaseModel) -> str:
    """sha256 of the canonical JSON of every artifact-shaping field."""
    payload = [part.model_dump(mode="json", exclude=_RUNTIME_FIELDS) for part in parts]
    encoded = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(encoded.encode("utf-8")).hexdigest()
