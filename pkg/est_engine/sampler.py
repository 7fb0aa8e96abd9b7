"""
Random index sets for subnetwork training, and the bounded queue that
produces them ahead of the training loop.
"""

from __future__ import annotations

import logging
import queue
import threading
from typing import Any, Iterator, Literal, NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from typeguard import typechecked

from est_engine.exceptions import ConfigError, StreamTerminatedError
from est_engine.masks import SamplingRates, SubnetworkMask, round_to_count
from est_engine.model.config import ModelConfig
from est_engine.scheduler import SamplingScheduler
from est_engine.types import IndexSet, RateTriple

logger = logging.getLogger(__name__)

STREAM_SAMPLER = 1
STREAM_DATA = 2
STREAM_INIT = 3
STREAM_EVAL = 4
STREAM_PROBE = 5

BIT_GENERATORS = {
    "pcg64": np.random.PCG64,
    "philox": np.random.Philox,
}

DEFAULT_QUEUE_CAPACITY = 4

__all__ = [
    "MaskQueue",
    "MaskRecord",
    "SamplerSeed",
    "iter_masks",
    "round_to_count",
    "sample_mask",
    "sample_subset",
    "start_mask_stream",
]


class SamplerSeed(BaseModel):
    """
    Root of every random stream in a run. A fixed seed, stream id and
    algorithm reproduce the whole index sequence.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = Field(default=0, ge=0, lt=2**64)
    """The 64-bit seed."""

    stream_id: int = Field(default=0, ge=0, lt=2**64)
    """Separates runs that share a seed."""

    algorithm: Literal["pcg64", "philox"] = "pcg64"
    """The numpy bit generator behind every stream."""

    def generator(self, purpose: int = STREAM_SAMPLER) -> np.random.Generator:
        """
        A fresh generator for one purpose. Each purpose (sampler, data,
        initialisation, evaluation, probes) gets an independent stream.
        """
        sequence = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(self.stream_id, purpose)
        )
        return np.random.Generator(BIT_GENERATORS[self.algorithm](sequence))

    def restore(self, purpose: int, state: dict[str, Any]) -> np.random.Generator:
        """A generator for `purpose` positioned at a saved bit generator state."""
        rng = self.generator(purpose)
        rng.bit_generator.state = state
        return rng


@typechecked
def sample_subset(n: int, k: int, rng: np.random.Generator) -> IndexSet:
    """
    Draw `k` distinct indices out of `range(n)`, uniformly over all
    subsets of size `k`, by a partial Fisher-Yates shuffle.

    Drawing all `n` indices consumes no randomness.

    Returns:
        The sorted subset.

    Raises:
        ValueError: If `k` is not in [1, n].
    """
    if not 1 <= k <= n:
        raise ValueError(f"Cannot sample {k} of {n} indices")
    if k == n:
        return tuple(range(n))

    pool = list(range(n))
    for i in range(k):
        j = int(rng.integers(i, n))
        pool[i], pool[j] = pool[j], pool[i]
    return tuple(sorted(pool[:k]))


@typechecked
def sample_mask(
    config: ModelConfig,
    rates: SamplingRates | RateTriple,
    rng: np.random.Generator,
) -> SubnetworkMask:
    """
    Sample one step's subnetwork: the active layers first, then heads
    and MLP columns for each active layer in ascending layer order.

    Args:
        config: The model architecture.
        rates: `(p_heads, p_mlp, p_layers)`.
        rng: The sampler stream.

    Raises:
        ConfigError: If a rate is outside (0, 1].
    """
    if not isinstance(rates, SamplingRates):
        for p in rates:
            round_to_count(p, 1)
        rates = SamplingRates.model_validate(rates)

    layers = sample_subset(
        config.n_layers, round_to_count(rates.p_layers, config.n_layers), rng
    )
    n_heads = round_to_count(rates.p_heads, config.n_heads)
    n_columns = round_to_count(rates.p_mlp, config.mlp_inner)

    head_sets: dict[int, IndexSet] = {}
    mlp_sets: dict[int, IndexSet] = {}
    for layer in layers:
        head_sets[layer] = sample_subset(config.n_heads, n_heads, rng)
        mlp_sets[layer] = sample_subset(config.mlp_inner, n_columns, rng)

    return SubnetworkMask(
        layer_set=layers, head_sets=head_sets, mlp_sets=mlp_sets, rates=rates
    )


class MaskRecord(NamedTuple):
    """A mask for one step, with the sampler state right after drawing it."""

    step: int
    mask: SubnetworkMask
    rng_state: dict[str, Any]


def iter_masks(
    scheduler: SamplingScheduler,
    config: ModelConfig,
    seed: SamplerSeed,
    start_step: int = 1,
    rng_state: dict[str, Any] | None = None,
) -> Iterator[MaskRecord]:
    """
    Masks for steps `start_step` to the end of the schedule, in order.

    Args:
        scheduler: Provides the rates of each step.
        config: The model architecture.
        seed: Root of the sampler stream.
        start_step: First step to produce.
        rng_state: Sampler state after step `start_step - 1`. Required
            to resume past step 1 without replaying earlier steps.
    """
    if rng_state is not None:
        rng = seed.restore(STREAM_SAMPLER, rng_state)
    else:
        rng = seed.generator(STREAM_SAMPLER)
        for step in range(1, start_step):
            sample_mask(config, scheduler.rates_at(step), rng)

    for step in range(start_step, scheduler.total_steps + 1):
        mask = sample_mask(config, scheduler.rates_at(step), rng)
        yield MaskRecord(step, mask, rng.bit_generator.state)


_END = object()


class MaskQueue:
    """
    A bounded FIFO filled by a background producer thread.

    The producer blocks while the queue is full and the consumer blocks
    while it is empty. A producer failure is re-raised on the next `get`
    as a `StreamTerminatedError`.

    Args:
        source: The records to produce, in order.
        capacity: Maximum number of records waiting in the queue.

    Example:
        >>> with start_mask_stream(scheduler, config, seed) as stream:
        ...     record = stream.get()
    """

    def __init__(
        self, source: Iterator[MaskRecord], capacity: int = DEFAULT_QUEUE_CAPACITY
    ):
        if capacity < 1:
            raise ConfigError(f"Mask queue capacity must be at least 1, got {capacity}")

        self.capacity = capacity
        self._queue: queue.Queue = queue.Queue(maxsize=capacity)
        self._stop = threading.Event()
        self._error: BaseException | None = None
        self._finished = False

        self._thread = threading.Thread(
            target=self._produce, args=(source,), name="est-mask-producer", daemon=True
        )
        self._thread.start()

    def _put(self, item: Any) -> bool:
        while not self._stop.is_set():
            try:
                self._queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _produce(self, source: Iterator[MaskRecord]) -> None:
        try:
            for record in source:
                if not self._put(record):
                    return
        except Exception as ex:
            logger.error("Mask producer failed: %s", ex)
            self._error = ex
        self._put(_END)

    def get(self) -> MaskRecord:
        """
        The next record, blocking until one is available.

        Raises:
            StreamTerminatedError: If the producer failed, the stream is
                exhausted or the queue was closed.
        """
        if self._finished or self._stop.is_set():
            raise self._terminated()

        item = self._queue.get()
        if item is _END:
            self._finished = True
            raise self._terminated()
        return item

    def _terminated(self) -> StreamTerminatedError:
        if self._error is not None:
            error = StreamTerminatedError(f"Mask producer failed: {self._error}")
            error.__cause__ = self._error
            return error
        if self._stop.is_set():
            return StreamTerminatedError("Mask stream was closed")
        return StreamTerminatedError("Mask stream is exhausted")

    def close(self) -> None:
        """Stop the producer and wait for it to exit."""
        self._stop.set()
        self._thread.join(timeout=5.0)

    def __enter__(self) -> MaskQueue:
        return self

    def __exit__(self, *exc_info: Any) -> None:
        self.close()


@typechecked
def start_mask_stream(
    scheduler: SamplingScheduler,
    config: ModelConfig,
    seed: SamplerSeed,
    capacity: int = DEFAULT_QUEUE_CAPACITY,
    start_step: int = 1,
    rng_state: dict[str, Any] | None = None,
) -> MaskQueue:
    """
    Start producing masks for every step of `scheduler` on a background
    thread. The sequence is identical to `iter_masks` with the same
    arguments, whatever the capacity.
    """
    logger.debug(
        "Starting mask stream at step %d with capacity %d", start_step, capacity
    )
    source = iter_masks(scheduler, config, seed, start_step, rng_state)
    return MaskQueue(source, capacity)
