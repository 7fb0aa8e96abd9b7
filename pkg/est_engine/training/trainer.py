from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import NamedTuple

import numpy as np
from typeguard import typechecked

from est_engine.autodiff import ComputationTape, set_precision
from est_engine.cost_model import ModuleCosts, measured_flops, module_costs
from est_engine.exceptions import CheckpointError, NonFiniteError
from est_engine.masks import SubnetworkMask
from est_engine.model import ModelParams, SubnetworkTransformer, init_params
from est_engine.sampler import STREAM_DATA, STREAM_INIT, SamplerSeed, start_mask_stream
from est_engine.scheduler import validate
from est_engine.training.checkpoint import Checkpoint, CheckpointWriter, load_checkpoint
from est_engine.training.config import TrainConfig, config_hash, to_config_text
from est_engine.training.data import eval_batches, load_corpus, next_batch
from est_engine.training.loss_log import LossLog
from est_engine.training.optimizer import AdamWState, adamw_step, clip_grad_norm, lr_at
from est_engine.training.run import RunManifest, RunSummary

logger = logging.getLogger(__name__)

PROGRESS_INTERVAL = 100


class EvalRecord(NamedTuple):
    step: int
    loss: float


@typechecked
def evaluate(
    params: ModelParams,
    corpus: np.ndarray,
    n_batches: int,
    batch_size: int,
    seed: SamplerSeed,
) -> float:
    """
    Mean loss of the complete model over fixed batches of `corpus`.

    Nothing is recorded for backward and the training random streams
    are untouched, so repeated calls return the same value.
    """
    model = SubnetworkTransformer(params)
    batches = eval_batches(corpus, n_batches, batch_size, params.config.seq_len, seed)
    losses = [model.loss(inputs, targets).item() for inputs, targets in batches]
    return float(np.mean(losses))


class Trainer:
    """
    Runs subnetwork training for one config.

    Each step takes the next mask from the stream, runs forward and
    backward on the sampled subnetwork, clips the gradient, applies AdamW
    and logs the loss with the step's measured FLOPs. The complete
    parameter set exists from the first step, so stage transitions only
    change the masks.

    Args:
        config: The run config.
        corpus: Training tokens. Loaded from `config.data` when omitted.
        eval_corpus: Held-out tokens for evaluation, if any.
        run: Where to write the loss log, checkpoints and summary. Nothing
            is written when omitted.
    """

    def __init__(
        self,
        config: TrainConfig,
        corpus: np.ndarray | None = None,
        eval_corpus: np.ndarray | None = None,
        run: RunManifest | None = None,
    ):
        self.config = config
        self.run = run
        min_tokens = config.model.seq_len + 1
        if corpus is None and config.data is not None:
            corpus = load_corpus(config.data.train_path, config.model.vocab, min_tokens)
        if corpus is None:
            raise ValueError("No training corpus: pass one or set data.train_path")
        if eval_corpus is None and config.data is not None and config.data.eval_path:
            eval_corpus = load_corpus(
                config.data.eval_path, config.model.vocab, min_tokens
            )
        self.corpus = corpus
        self.eval_corpus = eval_corpus
        self.eval_history: list[EvalRecord] = []
        self.warnings = validate(config.scheduler, config.total_steps)

    def _checkpoint(
        self,
        step: int,
        params: ModelParams,
        moments: AdamWState,
        sampler_state: dict | None,
        data_rng: np.random.Generator,
        flops: float,
        log: LossLog,
    ) -> Checkpoint:
        return Checkpoint(
            step=step,
            config=self.config,
            params=params,
            moments=moments,
            sampler_state=sampler_state,
            data_state=data_rng.bit_generator.state,
            cumulative_flops=flops,
            log=log,
        )

    def _evaluate(self, step: int, params: ModelParams) -> None:
        if self.eval_corpus is None:
            return
        loss = evaluate(
            params,
            self.eval_corpus,
            self.config.eval.batches,
            self.config.batch_size,
            self.config.seed,
        )
        self.eval_history.append(EvalRecord(step, loss))
        logger.info("step %d: eval loss %.4f", step, loss)

    def fit(self, resume: Path | None = None) -> tuple[LossLog, Checkpoint]:
        """
        Train to the end of the schedule.

        Args:
            resume: A checkpoint directory of this config to continue from.

        Returns:
            The loss log and the final checkpoint.

        Raises:
            NonFiniteError: If the loss or a gradient stops being finite.
                Checkpoints already written are kept.
            StreamTerminatedError: If the mask producer fails.
            CheckpointError: If `resume` belongs to another config.
        """
        config = self.config
        set_precision(config.precision)
        digest = config_hash(config)
        total = config.total_steps

        if resume is not None:
            checkpoint = load_checkpoint(resume, expected_hash=digest)
            if checkpoint.step >= total:
                raise CheckpointError(str(resume), "run is already complete")
            params, moments, log = checkpoint.params, checkpoint.moments, checkpoint.log
            data_rng = config.seed.restore(STREAM_DATA, checkpoint.data_state)
            sampler_state = checkpoint.sampler_state
            flops = checkpoint.cumulative_flops
            start = checkpoint.step + 1
            logger.info("Resuming from %s at step %d", resume, start)
        else:
            params = init_params(config.model, config.seed.generator(STREAM_INIT))
            moments = AdamWState.zeros(params.named_parameters())
            log = LossLog()
            data_rng = config.seed.generator(STREAM_DATA)
            sampler_state = None
            flops = 0.0
            start = 1

        if self.run is not None:
            self.run.create()
            self.run.config_path.write_text(to_config_text(config), encoding="utf-8")

        model = SubnetworkTransformer(params)
        named = params.named_parameters()
        costs = module_costs(
            config.model, config.tokens_per_step, config.backward_multiplier
        )
        full_mask = SubnetworkMask.full(config.model)
        writer = CheckpointWriter(config.checkpoint.async_write)
        stream = None
        if config.subnetwork_sampling:
            stream = start_mask_stream(
                config.scheduler,
                config.model,
                config.seed,
                config.mask_queue_capacity,
                start,
                sampler_state,
            )

        logger.info(
            "Training %d parameters for steps %d..%d (config %s)",
            params.num_parameters,
            start,
            total,
            digest,
        )
        try:
            for step in range(start, total + 1):
                mask = None
                if stream is not None:
                    record = stream.get()
                    mask, sampler_state = record.mask, record.rng_state

                inputs, targets = next_batch(
                    self.corpus, config.batch_size, config.model.seq_len, data_rng
                )
                params.zero_grad()
                with ComputationTape() as tape:
                    loss = model.loss(inputs, targets, mask)
                value = loss.item()
                if not math.isfinite(value):
                    raise NonFiniteError("loss", step)
                tape.backward(loss)

                if config.optimizer.grad_clip is not None:
                    clip_grad_norm(params.parameters(), config.optimizer.grad_clip)
                lr = lr_at(config.lr_schedule, config.optimizer.peak_lr, step, total)
                adamw_step(named, moments, step, lr, config.optimizer)

                flops += measured_flops(full_mask if mask is None else mask, costs)
                log.append(step, config.scheduler.stage_index(step), value, lr, flops)

                if step % PROGRESS_INTERVAL == 0:
                    logger.info("step %d: loss %.4f lr %.3g", step, value, lr)

                interval = config.checkpoint.interval
                due = bool(interval) and step % interval == 0 and step < total
                if self.run is not None and due:
                    writer.submit(
                        self._checkpoint(
                            step, params, moments, sampler_state, data_rng, flops, log
                        ),
                        self.run.checkpoint_path(step),
                    )

                every = config.eval.interval
                if every and step % every == 0 and step < total:
                    self._evaluate(step, params)
        except NonFiniteError:
            logger.error("Training aborted: non-finite values at step %d", step)
            raise
        finally:
            if stream is not None:
                stream.close()
            writer.close()

        final = self._checkpoint(
            total, params, moments, sampler_state, data_rng, flops, log
        )
        self._evaluate(total, params)
        if self.run is not None:
            self._write_outputs(final, costs)
        return log, final

    def _write_outputs(self, final: Checkpoint, costs: ModuleCosts) -> None:
        run = self.run
        writer = CheckpointWriter(async_write=False)
        writer.submit(final, run.checkpoint_path(final.step))
        final.log.write_csv(run.loss_log_path)
        if self.eval_history:
            lines = ["step,loss"] + [f"{r.step},{r.loss!r}" for r in self.eval_history]
            run.eval_log_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

        config = self.config
        layers = config.model.n_layers
        baseline = config.total_steps * layers * (costs.c_mha + costs.c_mlp)
        summary = RunSummary(
            config_hash=final.config_hash,
            steps=final.step,
            final_train_loss=final.log.last.loss,
            final_eval_loss=self.eval_history[-1].loss if self.eval_history else None,
            total_flops=final.cumulative_flops,
            baseline_flops=baseline,
        )
        run.summary_path.write_text(summary.to_text(), encoding="utf-8")
        logger.info(
            "Finished %d steps: loss %.4f, savings %.1f%%",
            final.step,
            summary.final_train_loss,
            100 * summary.savings_fraction,
        )


@typechecked
def train(
    config: TrainConfig,
    corpus: np.ndarray | None = None,
    eval_corpus: np.ndarray | None = None,
    run: RunManifest | None = None,
    resume: Path | None = None,
) -> tuple[LossLog, Checkpoint]:
    """
    Train a model from `config`. See `Trainer`.

    Example:
        >>> log, checkpoint = train(config, corpus=tokens)
        >>> log.last.loss
    """
    return Trainer(config, corpus, eval_corpus, run).fit(resume)
