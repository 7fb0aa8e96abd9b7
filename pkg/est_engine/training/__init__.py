from est_engine.training.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from est_engine.training.config import (
    CheckpointConfig,
    DataConfig,
    EvalConfig,
    LRScheduleConfig,
    OptimizerConfig,
    TrainConfig,
    config_hash,
    load_train_config,
    parse_train_config,
    to_config_text,
)
from est_engine.training.data import (
    decode_tokens,
    load_corpus,
    next_batch,
    tokenize_text,
    write_token_file,
)
from est_engine.training.loss_log import LossLog, LossRecord
from est_engine.training.optimizer import AdamWState, adamw_step, clip_grad_norm, lr_at
from est_engine.training.run import RunManifest, RunSummary
from est_engine.training.trainer import Trainer, evaluate, train

__all__ = [
    "AdamWState",
    "Checkpoint",
    "CheckpointConfig",
    "DataConfig",
    "EvalConfig",
    "LRScheduleConfig",
    "LossLog",
    "LossRecord",
    "OptimizerConfig",
    "RunManifest",
    "RunSummary",
    "TrainConfig",
    "Trainer",
    "adamw_step",
    "clip_grad_norm",
    "config_hash",
    "decode_tokens",
    "evaluate",
    "load_checkpoint",
    "load_corpus",
    "lr_at",
    "next_batch",
    "parse_train_config",
    "save_checkpoint",
    "to_config_text",
    "tokenize_text",
    "train",
    "write_token_file",
]
