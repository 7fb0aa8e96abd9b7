"""
FLOPs accounting for subnetwork training.

Only the attention and MLP blocks are counted. Embeddings, layer norms
and the output projection are computed during training but left out of
the model.
"""

from __future__ import annotations

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from typeguard import typechecked

from est_engine.exceptions import InvalidMaskError
from est_engine.masks import SamplingRates, SubnetworkMask
from est_engine.model.config import ModelConfig
from est_engine.scheduler import SamplingScheduler
from est_engine.types import RateTriple

DEFAULT_BACKWARD_MULTIPLIER = 2.0


class ModuleCosts(BaseModel):
    """Training FLOPs of one full layer's modules for one step."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    c_mha: float = Field(gt=0)
    """FLOPs of the complete attention block."""

    c_mlp: float = Field(gt=0)
    """FLOPs of the complete MLP block."""

    n_heads: int = Field(ge=1)
    """Heads the attention cost is spread over. Must match the model."""

    mlp_inner: int = Field(ge=1)
    """Columns the MLP cost is spread over. Must match the model."""


@typechecked
def module_costs(
    config: ModelConfig,
    tokens_per_step: int,
    backward_multiplier: float = DEFAULT_BACKWARD_MULTIPLIER,
) -> ModuleCosts:
    """
    Per-layer attention and MLP cost of one training step.

    With T tokens per step and f = 1 + `backward_multiplier`:

        c_mha = f * (8*T*d*N_H*d_k + 4*T*N*N_H*d_k)
        c_mlp = f * 4*T*d*N_M

    The first attention term covers the four projections, the second the
    score and value products.

    Args:
        config: The model architecture.
        tokens_per_step: Tokens processed per optimizer step, usually
            batch size times sequence length.
        backward_multiplier: Backward cost relative to forward.
    """
    if tokens_per_step < 1:
        raise ValueError(f"tokens_per_step must be positive, got {tokens_per_step}")
    if backward_multiplier < 0:
        raise ValueError(
            f"backward_multiplier must be non-negative, got {backward_multiplier}"
        )

    factor = 1.0 + backward_multiplier
    t = tokens_per_step
    width = config.attention_width
    projections = 8 * t * config.hidden * width
    attention = 4 * t * config.seq_len * width
    mlp = 4 * t * config.hidden * config.mlp_inner
    return ModuleCosts(
        c_mha=factor * (projections + attention),
        c_mlp=factor * mlp,
        n_heads=config.n_heads,
        mlp_inner=config.mlp_inner,
    )


def _triple(rates: SamplingRates | RateTriple) -> RateTriple:
    if isinstance(rates, SamplingRates):
        return rates.as_tuple()
    return SamplingRates.model_validate(rates).as_tuple()


@typechecked
def stage_step_cost(
    rates: SamplingRates | RateTriple, costs: ModuleCosts, n_layers: int
) -> float:
    """FLOPs of one step at the given rates: N_L * p_L * (p_H*C_H + p_M*C_M)."""
    p_heads, p_mlp, p_layers = _triple(rates)
    return n_layers * p_layers * (p_heads * costs.c_mha + p_mlp * costs.c_mlp)


class StageCost(BaseModel):
    """Cost of one scheduler stage."""

    model_config = ConfigDict(frozen=True)

    stage: int
    """1-based stage index."""

    steps: int
    """Number of steps in the stage."""

    rates: SamplingRates
    """The stage's rates."""

    step_cost: float
    """FLOPs per step."""

    stage_total: float
    """`steps * step_cost`."""

    mha_total: float
    """Attention share of `stage_total`."""

    mlp_total: float
    """MLP share of `stage_total`."""


class CostReport(BaseModel):
    """
    Total training cost of a scheduler against training the complete
    model for the same number of steps.
    """

    model_config = ConfigDict(frozen=True)

    per_stage: list[StageCost]
    """One entry per stage, in order."""

    est_total: float
    """Sum of the stage totals."""

    baseline_total: float
    """Cost of the complete model for every step."""

    baseline_mha: float
    """Attention share of `baseline_total`."""

    baseline_mlp: float
    """MLP share of `baseline_total`."""

    @property
    def savings_fraction(self) -> float:
        """`1 - est_total / baseline_total`."""
        return 1.0 - self.est_total / self.baseline_total

    @property
    def est_mha(self) -> float:
        return sum(stage.mha_total for stage in self.per_stage)

    @property
    def est_mlp(self) -> float:
        return sum(stage.mlp_total for stage in self.per_stage)

    def to_frame(self) -> pd.DataFrame:
        """One row per stage."""
        return pd.DataFrame(
            {
                "stage": [s.stage for s in self.per_stage],
                "steps": [s.steps for s in self.per_stage],
                "p_heads": [s.rates.p_heads for s in self.per_stage],
                "p_mlp": [s.rates.p_mlp for s in self.per_stage],
                "p_layers": [s.rates.p_layers for s in self.per_stage],
                "step_flops": [s.step_cost for s in self.per_stage],
                "stage_flops": [s.stage_total for s in self.per_stage],
            }
        )

    def summary(self) -> str:
        """The stage table followed by totals and the savings line."""
        table = self.to_frame().to_string(
            index=False, float_format=lambda v: f"{v:.4g}"
        )
        lines = [
            table,
            "",
            f"est flops:      {self.est_total:.6e}",
            f"  attention:    {self.est_mha:.6e}",
            f"  mlp:          {self.est_mlp:.6e}",
            f"baseline flops: {self.baseline_total:.6e}",
            f"  attention:    {self.baseline_mha:.6e}",
            f"  mlp:          {self.baseline_mlp:.6e}",
            f"savings: {100 * self.savings_fraction:.1f}%",
        ]
        return "\n".join(lines)


@typechecked
def total_cost(
    sched: SamplingScheduler, costs: ModuleCosts, n_layers: int
) -> CostReport:
    """
    Cost of training with `sched`, and of the complete model for the
    same number of steps.

    Example:
        >>> report = total_cost(preset("practical-gpt2"), costs, 12)
        >>> round(report.savings_fraction, 3)
        0.267
    """
    per_stage = []
    for index, (stage, steps) in enumerate(zip(sched.stages, sched.stage_lengths), 1):
        p_heads, p_mlp, p_layers = stage.rates.as_tuple()
        layers = n_layers * p_layers
        mha = steps * layers * p_heads * costs.c_mha
        mlp = steps * layers * p_mlp * costs.c_mlp
        step_cost = stage_step_cost(stage.rates, costs, n_layers)
        per_stage.append(
            StageCost(
                stage=index,
                steps=steps,
                rates=stage.rates,
                step_cost=step_cost,
                stage_total=steps * step_cost,
                mha_total=mha,
                mlp_total=mlp,
            )
        )

    total_steps = sched.total_steps
    return CostReport(
        per_stage=per_stage,
        est_total=sum(stage.stage_total for stage in per_stage),
        baseline_total=total_steps * n_layers * (costs.c_mha + costs.c_mlp),
        baseline_mha=total_steps * n_layers * costs.c_mha,
        baseline_mlp=total_steps * n_layers * costs.c_mlp,
    )


@typechecked
def measured_flops(mask: SubnetworkMask, costs: ModuleCosts) -> float:
    """
    FLOPs of the step that used `mask`, from the sizes of its sets.
    Skipped layers cost nothing.

    Raises:
        InvalidMaskError: If a set is larger than the unit counts in `costs`,
            which means the costs were built for another model.
    """
    total = 0.0
    for layer in mask.layer_set:
        n_heads = len(mask.head_sets[layer])
        n_columns = len(mask.mlp_sets[layer])
        if n_heads > costs.n_heads or n_columns > costs.mlp_inner:
            raise InvalidMaskError(
                [
                    f"layer {layer}: {n_heads} heads and {n_columns} columns do "
                    f"not fit costs for {costs.n_heads} heads and "
                    f"{costs.mlp_inner} columns"
                ]
            )
        heads = n_heads / costs.n_heads
        columns = n_columns / costs.mlp_inner
        total += heads * costs.c_mha + columns * costs.c_mlp
    return total
