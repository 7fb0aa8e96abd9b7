from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from typeguard import typechecked

from est_engine.config_file import (
    ParsedConfig,
    dump_config,
    parse_config_text,
    read_config_file,
)
from est_engine.model.config import ModelConfig
from est_engine.sampler import DEFAULT_QUEUE_CAPACITY, SamplerSeed
from est_engine.scheduler import SamplingScheduler
from est_engine.utils import config_error_from_validation


class OptimizerConfig(BaseModel):
    """AdamW settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    peak_lr: float = Field(default=6e-4, gt=0)
    """Learning rate at the end of warmup."""

    betas: tuple[float, float] = (0.9, 0.95)
    """Decay rates of the first and second moment estimates."""

    eps: float = Field(default=1e-8, gt=0)
    """Added to the root of the second moment."""

    weight_decay: float = Field(default=0.1, ge=0)
    """Decoupled weight decay. Not applied to embeddings or norms."""

    grad_clip: float | None = Field(default=1.0, gt=0)
    """Maximum global gradient norm. None disables clipping."""

    @model_validator(mode="after")
    def _betas_in_range(self) -> OptimizerConfig:
        if not all(0.0 <= b < 1.0 for b in self.betas):
            raise ValueError(f"betas must lie in [0, 1), got {self.betas}")
        return self


class LRScheduleConfig(BaseModel):
    """Learning rate warmup and decay."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    warmup_steps: int = Field(default=0, ge=0)
    """Steps of linear warmup from 0 to the peak."""

    decay: Literal["linear", "cosine"] = "cosine"
    """Shape of the decay from the peak to `min_lr` at the final step."""

    min_lr: float = Field(default=0.0, ge=0)
    """Learning rate at the final step."""


class DataConfig(BaseModel):
    """Corpus locations. Relative paths resolve against the config file."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    train_path: Path
    """Training corpus, raw UTF-8 text or a binary token file."""

    eval_path: Path | None = None
    """Held-out corpus for periodic evaluation."""


class CheckpointConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    interval: int = Field(default=0, ge=0)
    """Steps between checkpoints. 0 writes only the final checkpoint."""

    async_write: bool = False
    """Write checkpoints on a background thread."""


class EvalConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    interval: int = Field(default=0, ge=0)
    """Steps between evaluations. 0 evaluates only at the end."""

    batches: int = Field(default=8, ge=1)
    """Fixed batches per evaluation."""


class TrainConfig(BaseModel):
    """
    Everything that determines a training run. Two runs with equal configs
    produce identical loss logs.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    model: ModelConfig
    """The architecture."""

    scheduler: SamplingScheduler
    """Sampling rates per stage. Its last end step is the run length."""

    steps: int | None = Field(default=None, ge=1)
    """Optional explicit run length. Must match the scheduler."""

    batch_size: int = Field(default=8, ge=1)
    """Sequences per step."""

    optimizer: OptimizerConfig = OptimizerConfig()
    lr_schedule: LRScheduleConfig = LRScheduleConfig()

    seed: SamplerSeed = SamplerSeed()
    """Root of every random stream: initialisation, data, masks, evaluation."""

    data: DataConfig | None = None
    """Corpus paths. May be omitted when corpora are passed in directly."""

    checkpoint: CheckpointConfig = CheckpointConfig()
    eval: EvalConfig = EvalConfig()

    precision: Literal["fp32", "fp64"] = "fp32"
    """Float type of every tensor."""

    subnetwork_sampling: bool = True
    """
    When false, every step runs the complete model without a mask stream,
    whatever the scheduler's rates. Used for naive baselines.
    """

    mask_queue_capacity: int = Field(default=DEFAULT_QUEUE_CAPACITY, ge=1)
    """Masks the background producer may prepare ahead of training."""

    backward_multiplier: float = Field(default=2.0, ge=0)
    """Backward cost relative to forward in the FLOPs ledger."""

    @model_validator(mode="after")
    def _consistent_length(self) -> TrainConfig:
        if self.steps is not None and self.steps != self.scheduler.total_steps:
            raise ValueError(
                f"steps ({self.steps}) must equal the scheduler's last end step "
                f"({self.scheduler.total_steps})"
            )
        if self.lr_schedule.warmup_steps > self.scheduler.total_steps:
            raise ValueError(
                f"warmup_steps ({self.lr_schedule.warmup_steps}) exceeds the run "
                f"length ({self.scheduler.total_steps})"
            )
        return self

    @property
    def total_steps(self) -> int:
        return self.scheduler.total_steps

    @property
    def tokens_per_step(self) -> int:
        return self.batch_size * self.model.seq_len


@typechecked
def config_from_values(
    values: dict[str, Any],
    lines: dict[str, int] | None = None,
    base_dir: Path | None = None,
) -> TrainConfig:
    """
    Build a `TrainConfig` from nested values.

    Args:
        values: Nested sections, e.g. from `parse_config_text`.
        lines: Line of each dotted key, for error messages.
        base_dir: Directory that relative data paths resolve against.

    Raises:
        ConfigError: With one entry per invalid field.
    """
    data = values.get("data")
    if base_dir is not None and isinstance(data, dict):
        data = dict(data)
        for key in ("train_path", "eval_path"):
            if isinstance(data.get(key), str) and not Path(data[key]).is_absolute():
                data[key] = str(base_dir / data[key])
        values = {**values, "data": data}

    try:
        return TrainConfig.model_validate(values)
    except ValidationError as ex:
        raise config_error_from_validation(
            ex, "Invalid training config", lines=lines
        ) from ex


@typechecked
def load_train_config(path: str | Path) -> TrainConfig:
    """
    Read a training config file.

    Raises:
        ConfigError: If the file is missing, malformed or invalid. Field
            errors name the line they came from.
    """
    path = Path(path)
    parsed = read_config_file(path)
    return config_from_values(parsed.values, parsed.lines, path.parent.resolve())


def parse_train_config(text: str, source: str = "<string>") -> TrainConfig:
    """Build a `TrainConfig` from config text. Data paths are kept as given."""
    parsed: ParsedConfig = parse_config_text(text, source)
    return config_from_values(parsed.values, parsed.lines)


def to_config_text(config: TrainConfig) -> str:
    """
    The config in file format. Parsing the text gives back an equal
    config. The scheduler is written as explicit end steps and rates.
    """
    values = config.model_dump(mode="json", exclude_none=True)
    values["scheduler"] = {
        "end_steps": list(config.scheduler.end_steps),
        "rates": [list(stage.rates.as_tuple()) for stage in config.scheduler.stages],
    }
    return dump_config(values)


def config_hash(config: TrainConfig) -> str:
    """Short digest identifying the config, stored in checkpoints."""
    return hashlib.sha256(to_config_text(config).encode("utf-8")).hexdigest()[:16]
