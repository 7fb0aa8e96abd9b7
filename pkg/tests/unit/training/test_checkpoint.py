from pathlib import Path

import numpy as np
import pytest

from est_engine.autodiff import get_precision
from est_engine.exceptions import CheckpointError
from est_engine.training import Checkpoint, load_checkpoint, save_checkpoint, train
from est_engine.training.checkpoint import (
    CheckpointWriter,
    dump_rng_state,
    load_rng_state,
)
from est_engine.training.config import config_hash


@pytest.fixture
def checkpoint(tiny_train_config, tiny_corpus) -> Checkpoint:
    _, final = train(tiny_train_config, corpus=tiny_corpus)
    return final


def test_save_and_load(tmp_path: Path, checkpoint: Checkpoint):
    """
    Verify that every part of a checkpoint survives a save and load.
    """
    directory = save_checkpoint(checkpoint, tmp_path / "step-00000020")

    loaded = load_checkpoint(directory, expected_hash=checkpoint.config_hash)

    assert loaded.step == 20
    assert loaded.config == checkpoint.config
    np.testing.assert_array_equal(loaded.params.flatten(), checkpoint.params.flatten())
    for name, m in checkpoint.moments.m.items():
        np.testing.assert_array_equal(loaded.moments.m[name], m)
        v = checkpoint.moments.v[name]
        np.testing.assert_array_equal(loaded.moments.v[name], v)
    assert loaded.sampler_state == checkpoint.sampler_state
    assert loaded.data_state == checkpoint.data_state
    assert loaded.cumulative_flops == checkpoint.cumulative_flops
    assert loaded.log.records == checkpoint.log.records


def test_directory_layout(tmp_path: Path, checkpoint: Checkpoint):
    directory = save_checkpoint(checkpoint, tmp_path / "ckpt")

    assert sorted(p.name for p in directory.iterdir()) == [
        "config.txt",
        "loss_log.csv",
        "manifest",
        "moments.bin",
        "params.bin",
    ]
    count = checkpoint.params.num_parameters
    assert (directory / "params.bin").stat().st_size == 4 * count
    assert (directory / "moments.bin").stat().st_size == 8 * count
    assert not (tmp_path / "ckpt.partial").exists()


def test_save__replaces_existing(tmp_path: Path, checkpoint: Checkpoint):
    directory = tmp_path / "ckpt"
    save_checkpoint(checkpoint, directory)
    (directory / "stale").write_text("x")

    save_checkpoint(checkpoint, directory)

    assert not (directory / "stale").exists()


def test_load__wrong_config(tmp_path: Path, checkpoint: Checkpoint):
    """
    Assert that loading with another config hash fails.
    """
    directory = save_checkpoint(checkpoint, tmp_path / "ckpt")

    with pytest.raises(CheckpointError) as ex:
        load_checkpoint(directory, expected_hash="0" * 16)

    assert "belongs to config" in str(ex.value)


def test_load__missing_manifest(tmp_path: Path):
    with pytest.raises(CheckpointError) as ex:
        load_checkpoint(tmp_path)

    assert str(ex.value) == f"Checkpoint {tmp_path}: no manifest found"


def test_load__truncated_parameters(tmp_path: Path, checkpoint: Checkpoint):
    directory = save_checkpoint(checkpoint, tmp_path / "ckpt")
    params = directory / "params.bin"
    params.write_bytes(params.read_bytes()[:-4])

    with pytest.raises(CheckpointError) as ex:
        load_checkpoint(directory)

    assert "params.bin holds" in str(ex.value)


def test_load__edited_config(tmp_path: Path, checkpoint: Checkpoint):
    """
    Assert that a hand-edited config.txt is detected.
    """
    directory = save_checkpoint(checkpoint, tmp_path / "ckpt")
    config = directory / "config.txt"
    config.write_text(config.read_text().replace("batch_size = 2", "batch_size = 3"))

    with pytest.raises(CheckpointError) as ex:
        load_checkpoint(directory)

    assert "does not match the manifest hash" in str(ex.value)


def test_load__restores_precision(tmp_path: Path, tiny_train_config, tiny_corpus):
    config = tiny_train_config.model_copy(update={"precision": "fp64"})
    _, final = train(config, corpus=tiny_corpus)
    directory = save_checkpoint(final, tmp_path / "ckpt")
    from est_engine.autodiff import set_precision

    set_precision("fp32")
    loaded = load_checkpoint(directory, expected_hash=config_hash(config))

    assert get_precision() == "fp64"
    assert loaded.params.token_embedding.data.dtype == np.float64
    np.testing.assert_array_equal(loaded.params.flatten(), final.params.flatten())


def test_rng_state_round_trip():
    rng = np.random.Generator(np.random.Philox(5))
    rng.integers(0, 10, size=3)
    state = rng.bit_generator.state

    restored = np.random.Generator(np.random.Philox())
    restored.bit_generator.state = load_rng_state(dump_rng_state(state))

    np.testing.assert_array_equal(restored.integers(0, 100, 5), rng.integers(0, 100, 5))


def test_snapshot_is_frozen(checkpoint: Checkpoint):
    snapshot = checkpoint.snapshot()

    checkpoint.params.token_embedding.data[...] = 0.0
    for m in checkpoint.moments.m.values():
        m[...] = 1.0

    assert np.any(snapshot.params.token_embedding.data != 0.0)
    assert all(np.all(m != 1.0) for m in snapshot.moments.m.values())


@pytest.mark.parametrize("async_write", [False, True])
def test_writer(tmp_path: Path, checkpoint: Checkpoint, async_write: bool):
    """
    Verify that inline and background writers both produce loadable checkpoints.
    """
    writer = CheckpointWriter(async_write)

    writer.submit(checkpoint, tmp_path / "a")
    writer.submit(checkpoint, tmp_path / "b")
    writer.close()

    assert load_checkpoint(tmp_path / "a").step == 20
    assert load_checkpoint(tmp_path / "b").step == 20


def test_writer__error_surfaces_on_close(tmp_path: Path, checkpoint: Checkpoint):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    writer = CheckpointWriter(async_write=True)

    writer.submit(checkpoint, blocker / "ckpt")

    with pytest.raises(OSError):
        writer.close()
