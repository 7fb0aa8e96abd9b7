from __future__ import annotations

import logging
import math
from bisect import bisect_left
from typing import Any, Sequence
from warnings import warn

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from typeguard import typechecked

from est_engine.exceptions import ConfigError, FieldErrorInfo, StepRangeError
from est_engine.masks import SamplingRates
from est_engine.presets import Preset, list_presets
from est_engine.types import RateTriple
from est_engine.utils import config_error_from_validation

logger = logging.getLogger(__name__)

__all__ = [
    "SamplingScheduler",
    "Stage",
    "list_presets",
    "preset",
    "validate",
]


class Stage(BaseModel):
    """One stage of a sampling scheduler."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    end_step: int = Field(ge=1)
    """Last step of the stage, inclusive."""

    rates: SamplingRates
    """Rates used for every step of the stage."""


class SamplingScheduler(BaseModel):
    """
    Maps each training step to the sampling rates of its stage. Stage t
    covers the steps `(end_step[t-1], end_step[t]]`, with the first
    stage starting at step 1.

    Besides `stages`, accepts `end_steps` with `rates`, or a `preset`
    name with an optional `scale`.

    Example:
        >>> sched = SamplingScheduler.build([200, 700, 1500], [
        ...     (0.5, 0.5, 0.5), (0.5, 0.5, 1), (1, 1, 1)
        ... ])
        >>> sched.rates_at(201).as_tuple()
        (0.5, 0.5, 1.0)
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    stages: tuple[Stage, ...] = Field(min_length=1)
    """The stages, in order."""

    @model_validator(mode="before")
    @classmethod
    def _from_shorthand(cls, value: Any) -> Any:
        if not isinstance(value, dict) or "stages" in value:
            return value

        if "preset" in value:
            extra = set(value) - {"preset", "scale"}
            if extra:
                raise ValueError(f"unexpected keys with a preset: {sorted(extra)}")
            built = preset(value["preset"], value.get("scale"))
            return {"stages": built.stages}

        if "end_steps" in value or "rates" in value:
            end_steps = value.get("end_steps")
            rates = value.get("rates")
            if end_steps is None or rates is None:
                raise ValueError("end_steps and rates must be given together")
            if isinstance(end_steps, int):
                end_steps = [end_steps]
            if rates and not isinstance(rates[0], (list, tuple, dict, SamplingRates)):
                rates = [rates]
            if len(end_steps) != len(rates):
                raise ValueError(
                    f"{len(end_steps)} end_steps but {len(rates)} rate triples"
                )
            return {
                "stages": [
                    {"end_step": end, "rates": rate}
                    for end, rate in zip(end_steps, rates)
                ]
            }

        return value

    @model_validator(mode="after")
    def _strictly_increasing(self) -> SamplingScheduler:
        errors = _ordering_errors(self.end_steps)
        if errors:
            raise ValueError("; ".join(f"{e.path}: {e.message}" for e in errors))
        return self

    @classmethod
    def build(
        cls,
        end_steps: Sequence[int],
        rates: Sequence[SamplingRates | RateTriple],
    ) -> SamplingScheduler:
        """
        A scheduler from parallel lists of end steps and rates.

        Raises:
            ConfigError: If the stages are invalid.
        """
        return cls.parse({"end_steps": list(end_steps), "rates": list(rates)})

    @classmethod
    def parse(
        cls,
        values: Any,
        prefix: str = "scheduler",
        lines: dict[str, int] | None = None,
    ) -> SamplingScheduler:
        """
        Validate raw values, raising `ConfigError` with field paths
        instead of a pydantic `ValidationError`.
        """
        try:
            return cls.model_validate(values)
        except ValidationError as ex:
            raise config_error_from_validation(
                ex, "Invalid sampling scheduler", prefix, lines
            ) from ex

    @property
    def end_steps(self) -> tuple[int, ...]:
        return tuple(stage.end_step for stage in self.stages)

    @property
    def total_steps(self) -> int:
        """The final step of the last stage."""
        return self.stages[-1].end_step

    @property
    def stage_lengths(self) -> tuple[int, ...]:
        """Number of steps in each stage."""
        starts = (0,) + self.end_steps[:-1]
        return tuple(end - start for start, end in zip(starts, self.end_steps))

    def stage_index(self, step: int) -> int:
        """
        The 1-based stage containing `step`.

        Raises:
            StepRangeError: If `step` is outside [1, total_steps].
        """
        if not 1 <= step <= self.total_steps:
            raise StepRangeError(step, self.total_steps)
        return bisect_left(self.end_steps, step) + 1

    def rates_at(self, step: int) -> SamplingRates:
        """
        The rates of the stage containing `step`. Boundary steps belong to
        the stage they end.

        Raises:
            StepRangeError: If `step` is outside [1, total_steps].
        """
        return self.stages[self.stage_index(step) - 1].rates

    def as_columns(self) -> dict[str, list]:
        """`end_steps` and `rates` as parallel lists."""
        return {
            "end_steps": list(self.end_steps),
            "rates": [stage.rates.as_tuple() for stage in self.stages],
        }


def _ordering_errors(end_steps: Sequence[int]) -> list[FieldErrorInfo]:
    errors = []
    for i in range(1, len(end_steps)):
        if end_steps[i] <= end_steps[i - 1]:
            errors.append(
                FieldErrorInfo(
                    path=f"stages.{i}.end_step",
                    message=(
                        f"end steps must be strictly increasing, "
                        f"got {end_steps[i]} after {end_steps[i - 1]}"
                    ),
                )
            )
    return errors


@typechecked
def preset(name: str, scale: float | None = None) -> SamplingScheduler:
    """
    A packaged scheduler, optionally rescaled for shorter runs.

    Scaling multiplies every end step by `scale` and rounds half up.
    Rates are unchanged. An end step that would collide with the previous
    one after rounding is bumped to keep the stages strictly increasing,
    with a warning.

    Args:
        name: Preset name, see `list_presets()`.
        scale: Optional positive factor applied to every end step.

    Raises:
        ConfigError: If the preset does not exist or `scale` is not
            positive.

    Example:
        >>> preset("practical-gpt2", scale=0.01).end_steps
        (200, 700, 1500)
    """
    found = Preset.get(name)
    end_steps = list(found.end_steps)

    if scale is not None:
        if not scale > 0 or math.isinf(scale):
            raise ConfigError(f"Preset scale must be a positive number, got {scale}")

        scaled: list[int] = []
        for end_step in end_steps:
            rounded = math.floor(end_step * scale + 0.5)
            floor_value = scaled[-1] + 1 if scaled else 1
            if rounded < floor_value:
                message = (
                    f"Preset {name} at scale {scale:g}: end step {end_step} rounds "
                    f"to {rounded}, raised to {floor_value}"
                )
                logger.warning(message)
                warn(message, UserWarning, stacklevel=2)
                rounded = floor_value
            scaled.append(rounded)
        end_steps = scaled

    return SamplingScheduler.build(end_steps, found.rates)


@typechecked
def validate(sched: SamplingScheduler, total_steps: int) -> list[str]:
    """
    Check a scheduler against a training run.

    Args:
        sched: The scheduler.
        total_steps: Number of training steps configured for the run.

    Returns:
        Human-readable warnings. A final stage that does not train the
        complete model is a warning, not an error.

    Raises:
        ConfigError: If end steps are not strictly increasing, a rate is
            outside (0, 1] or the last end step is not `total_steps`.
    """
    field_errors = [
        FieldErrorInfo(path=f"scheduler.{e.path}", message=e.message)
        for e in _ordering_errors(sched.end_steps)
    ]
    for i, stage in enumerate(sched.stages):
        for label, p in zip(("p_heads", "p_mlp", "p_layers"), stage.rates.as_tuple()):
            if not 0.0 < p <= 1.0:
                field_errors.append(
                    FieldErrorInfo(
                        path=f"scheduler.stages.{i}.rates.{label}",
                        message=f"rate must be in (0, 1], got {p}",
                    )
                )
    if sched.total_steps != total_steps:
        field_errors.append(
            FieldErrorInfo(
                path=f"scheduler.stages.{len(sched.stages) - 1}.end_step",
                message=(
                    f"last end step {sched.total_steps} must equal "
                    f"the number of training steps {total_steps}"
                ),
            )
        )
    if field_errors:
        raise ConfigError("Invalid sampling scheduler", field_errors)

    warnings = []
    final = sched.stages[-1].rates
    if not final.is_full:
        message = (
            f"The final stage samples with rates {final}; "
            "the complete model is never trained on its own"
        )
        logger.warning(message)
        warn(message, UserWarning, stacklevel=2)
        warnings.append(message)
    return warnings
