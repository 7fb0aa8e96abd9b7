"""
Checkpoint directories:

    manifest       key = value lines: config hash, step, precision, RNG states
    params.bin     little-endian parameter values in declaration order
    moments.bin    AdamW first then second moments, same layout
    config.txt     the run config
    loss_log.csv   the loss log up to the checkpoint step
"""

from __future__ import annotations

import json
import logging
import shutil
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from est_engine.autodiff import PRECISIONS, set_precision
from est_engine.config_file import dump_config, read_config_file
from est_engine.exceptions import CheckpointError, ConfigError
from est_engine.model.params import ModelParams, init_params
from est_engine.sampler import STREAM_INIT
from est_engine.training.config import (
    TrainConfig,
    config_hash,
    parse_train_config,
    to_config_text,
)
from est_engine.training.loss_log import LossLog
from est_engine.training.optimizer import AdamWState

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = "manifest"
PARAMS_FILE = "params.bin"
MOMENTS_FILE = "moments.bin"
CONFIG_FILE = "config.txt"
LOSS_LOG_FILE = "loss_log.csv"


def _encode_state(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return {"__ndarray__": value.tolist(), "dtype": str(value.dtype)}
    if isinstance(value, np.integer):
        return int(value)
    raise TypeError(f"Cannot encode {type(value).__name__} in an RNG state")


def _decode_state(value: dict[str, Any]) -> Any:
    if "__ndarray__" in value:
        return np.asarray(value["__ndarray__"], dtype=value["dtype"])
    return value


def dump_rng_state(state: dict[str, Any]) -> str:
    return json.dumps(state, default=_encode_state, sort_keys=True)


def load_rng_state(text: str) -> dict[str, Any]:
    return json.loads(text, object_hook=_decode_state)


@dataclass
class Checkpoint:
    """
    Complete training state after `step`. Restoring it and continuing
    reproduces the uninterrupted run exactly.
    """

    step: int
    config: TrainConfig
    params: ModelParams
    moments: AdamWState
    sampler_state: dict[str, Any] | None
    """Sampler RNG state after drawing the mask of `step`. None without sampling."""
    data_state: dict[str, Any]
    """Data RNG state after drawing the batch of `step`."""
    cumulative_flops: float
    log: LossLog

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def snapshot(self) -> Checkpoint:
        """A copy that later training steps cannot modify."""
        return Checkpoint(
            step=self.step,
            config=self.config,
            params=self.params.snapshot(),
            moments=self.moments.copy(),
            sampler_state=self.sampler_state,
            data_state=self.data_state,
            cumulative_flops=self.cumulative_flops,
            log=self.log.truncated(self.step),
        )


def _little_endian(array: np.ndarray) -> bytes:
    return array.astype(array.dtype.newbyteorder("<"), copy=False).tobytes()


def save_checkpoint(checkpoint: Checkpoint, directory: str | Path) -> Path:
    """
    Write a checkpoint directory, replacing any existing one at the same
    path once the new one is complete.

    Returns:
        The directory.
    """
    directory = Path(directory)
    staging = directory.with_name(directory.name + ".partial")
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir(parents=True)

    params = checkpoint.params
    names = [name for name, _ in params.named_parameters()]
    moments = [checkpoint.moments.m[n].reshape(-1) for n in names] + [
        checkpoint.moments.v[n].reshape(-1) for n in names
    ]

    manifest = {
        "format_version": FORMAT_VERSION,
        "config_hash": checkpoint.config_hash,
        "step": checkpoint.step,
        "precision": checkpoint.config.precision,
        "parameter_count": params.num_parameters,
        "cumulative_flops": repr(float(checkpoint.cumulative_flops)),
        "data_rng": dump_rng_state(checkpoint.data_state),
    }
    if checkpoint.sampler_state is not None:
        manifest["sampler_rng"] = dump_rng_state(checkpoint.sampler_state)

    (staging / MANIFEST).write_text(dump_config(manifest), encoding="utf-8")
    (staging / PARAMS_FILE).write_bytes(_little_endian(params.flatten()))
    (staging / MOMENTS_FILE).write_bytes(_little_endian(np.concatenate(moments)))
    config_text = to_config_text(checkpoint.config)
    (staging / CONFIG_FILE).write_text(config_text, encoding="utf-8")
    checkpoint.log.truncated(checkpoint.step).write_csv(staging / LOSS_LOG_FILE)

    if directory.exists():
        shutil.rmtree(directory)
    staging.rename(directory)
    logger.info("Wrote checkpoint for step %d to %s", checkpoint.step, directory)
    return directory


def _read_payload(
    path: Path, dtype: np.dtype, count: int, directory: Path
) -> np.ndarray:
    try:
        raw = path.read_bytes()
    except OSError as ex:
        raise CheckpointError(str(directory), f"cannot read {path.name}") from ex
    if len(raw) != count * dtype.itemsize:
        raise CheckpointError(
            str(directory),
            f"{path.name} holds {len(raw)} bytes, expected {count * dtype.itemsize}",
        )
    return np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(dtype)


def load_checkpoint(
    directory: str | Path, expected_hash: str | None = None
) -> Checkpoint:
    """
    Read a checkpoint directory. Switches the engine precision to the one
    the checkpoint was written with.

    Args:
        directory: The checkpoint directory.
        expected_hash: When given, the checkpoint must belong to a config
            with this hash.

    Raises:
        CheckpointError: If files are missing, sizes disagree or the hash
            does not match.
    """
    directory = Path(directory)
    if not (directory / MANIFEST).is_file():
        raise CheckpointError(str(directory), "no manifest found")

    try:
        manifest = read_config_file(directory / MANIFEST, raw=True).values
        config_text = (directory / CONFIG_FILE).read_text(encoding="utf-8")
        config = parse_train_config(config_text, str(directory / CONFIG_FILE))
        step = int(manifest["step"])
        precision = manifest["precision"]
        recorded_hash = manifest["config_hash"]
        count = int(manifest["parameter_count"])
        cumulative_flops = float(manifest["cumulative_flops"])
        data_state = load_rng_state(manifest["data_rng"])
        sampler_state = (
            load_rng_state(manifest["sampler_rng"])
            if "sampler_rng" in manifest
            else None
        )
        log = LossLog.read_csv(directory / LOSS_LOG_FILE)
    except (ConfigError, KeyError, ValueError, OSError) as ex:
        raise CheckpointError(str(directory), f"unreadable ({ex})") from ex

    if int(manifest.get("format_version", 0)) != FORMAT_VERSION:
        raise CheckpointError(str(directory), "unsupported format version")
    if precision not in PRECISIONS:
        raise CheckpointError(str(directory), f"unknown precision {precision}")
    if config_hash(config) != recorded_hash:
        raise CheckpointError(
            str(directory), "config.txt does not match the manifest hash"
        )
    if expected_hash is not None and recorded_hash != expected_hash:
        raise CheckpointError(
            str(directory),
            f"belongs to config {recorded_hash}, not {expected_hash}",
        )

    set_precision(precision)
    dtype = np.dtype(PRECISIONS[precision])
    params = init_params(config.model, config.seed.generator(STREAM_INIT))
    if params.num_parameters != count:
        raise CheckpointError(
            str(directory),
            f"manifest lists {count} parameters, "
            f"config has {params.num_parameters}",
        )
    params.assign_flat(_read_payload(directory / PARAMS_FILE, dtype, count, directory))

    flat_moments = _read_payload(directory / MOMENTS_FILE, dtype, 2 * count, directory)
    moments = AdamWState()
    offset = 0
    for store in (moments.m, moments.v):
        for name, t in params.named_parameters():
            store[name] = flat_moments[offset : offset + t.size].reshape(t.shape).copy()
            offset += t.size

    return Checkpoint(
        step=step,
        config=config,
        params=params,
        moments=moments,
        sampler_state=sampler_state,
        data_state=data_state,
        cumulative_flops=cumulative_flops,
        log=log,
    )


class CheckpointWriter:
    """
    Writes checkpoints either inline or on a single background thread.
    Background writes receive a snapshot, so training may continue while
    they run. Errors surface on the next `submit` or on `close`.
    """

    def __init__(self, async_write: bool = False):
        self._executor = ThreadPoolExecutor(max_workers=1) if async_write else None
        self._pending: Future | None = None

    def submit(self, checkpoint: Checkpoint, directory: Path) -> None:
        if self._executor is None:
            save_checkpoint(checkpoint, directory)
            return
        self.wait()
        self._pending = self._executor.submit(
            save_checkpoint, checkpoint.snapshot(), directory
        )

    def wait(self) -> None:
        """Block until the pending write finishes, re-raising its error."""
        if self._pending is not None:
            pending, self._pending = self._pending, None
            pending.result()

    def close(self) -> None:
        try:
            self.wait()
        finally:
            if self._executor is not None:
                self._executor.shutdown(wait=True)
