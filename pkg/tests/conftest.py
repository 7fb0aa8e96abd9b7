from pathlib import Path
from typing import Iterator
from warnings import simplefilter

import numpy as np
import pytest

from est_engine.autodiff import get_precision, set_precision
from est_engine.model import ModelConfig, ModelParams, init_params
from est_engine.sampler import STREAM_INIT, SamplerSeed
from est_engine.scheduler import SamplingScheduler
from est_engine.training import TrainConfig

# Set so python always shows warnings in tests
simplefilter("always")


@pytest.fixture(autouse=True)
def restore_precision() -> Iterator[None]:
    """
    Training and checkpoint loading switch the engine precision; put it
    back after every test.
    """
    before = get_precision()
    yield
    set_precision(before)


@pytest.fixture
def fp64() -> Iterator[None]:
    """Run a test in double precision."""
    set_precision("fp64")
    yield


@pytest.fixture
def tiny_config() -> ModelConfig:
    """
    A model small enough for finite-difference checks.
    """
    return ModelConfig(
        n_layers=2,
        n_heads=2,
        head_dim=4,
        hidden=8,
        mlp_inner=16,
        vocab=16,
        seq_len=8,
    )


@pytest.fixture
def tiny_params(tiny_config: ModelConfig) -> ModelParams:
    """Initialised parameters for `tiny_config` at the current precision."""
    return init_params(tiny_config, SamplerSeed(seed=7).generator(STREAM_INIT))


@pytest.fixture
def tiny_corpus() -> np.ndarray:
    """A repetitive token sequence over a vocabulary of 16."""
    pattern = np.array([1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12], dtype=np.int64)
    return np.tile(pattern, 50)


@pytest.fixture
def tiny_scheduler() -> SamplingScheduler:
    """Two sampled stages followed by the complete model."""
    return SamplingScheduler.build(
        [6, 12, 20], [(0.5, 0.5, 0.5), (0.5, 0.5, 1.0), (1.0, 1.0, 1.0)]
    )


@pytest.fixture
def tiny_train_config(
    tiny_config: ModelConfig, tiny_scheduler: SamplingScheduler
) -> TrainConfig:
    """A 20-step run of the tiny model."""
    return TrainConfig(
        model=tiny_config,
        scheduler=tiny_scheduler,
        batch_size=2,
        seed=SamplerSeed(seed=11),
        optimizer={"peak_lr": 1e-2},
        lr_schedule={"warmup_steps": 2},
    )


@pytest.fixture
def text_corpus_file(tmp_path: Path) -> Path:
    """A small UTF-8 text file."""
    path = tmp_path / "corpus.txt"
    text = "the quick brown fox jumps over the lazy dog\n" * 20
    path.write_text(text, encoding="utf-8")
    return path
