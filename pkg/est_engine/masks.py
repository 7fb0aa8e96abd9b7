from __future__ import annotations

import math
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, model_validator
from typeguard import typechecked

from est_engine.exceptions import ConfigError, InvalidMaskError
from est_engine.types import IndexSet, RateTriple


@typechecked
def round_to_count(p: float, n: int) -> int:
    """
    Number of units kept when sampling a fraction `p` of `n` units.

    Rounds half up and clamps to [1, n], so at least one unit is always
    kept.

    Args:
        p: Sampling rate in (0, 1].
        n: Number of units, at least 1.

    Returns:
        The subset size.

    Raises:
        ConfigError: If `p` is outside (0, 1] or `n` is not positive.

    Example:
        >>> round_to_count(0.5, 5)
        3
    """
    if not 0.0 < p <= 1.0 or math.isnan(p):
        raise ConfigError(f"Sampling rate must be in (0, 1], got {p}")
    if n < 1:
        raise ConfigError(f"Unit count must be positive, got {n}")
    return min(n, max(1, math.floor(p * n + 0.5)))


class SamplingRates(BaseModel):
    """
    The fraction of heads, MLP columns and layers active in a step.

    Also accepts a plain `(p_heads, p_mlp, p_layers)` sequence.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    p_heads: float = Field(gt=0.0, le=1.0)
    """Fraction of attention heads sampled in each active layer."""

    p_mlp: float = Field(gt=0.0, le=1.0)
    """Fraction of MLP intermediate columns sampled in each active layer."""

    p_layers: float = Field(gt=0.0, le=1.0)
    """Fraction of layers active in the step."""

    @model_validator(mode="before")
    @classmethod
    def _from_sequence(cls, value: Any) -> Any:
        if isinstance(value, (list, tuple)):
            if len(value) != 3:
                raise ValueError(
                    f"expected 3 rates (p_heads, p_mlp, p_layers), got {len(value)}"
                )
            return dict(zip(("p_heads", "p_mlp", "p_layers"), value))
        return value

    def as_tuple(self) -> RateTriple:
        return (self.p_heads, self.p_mlp, self.p_layers)

    @property
    def is_full(self) -> bool:
        """Whether every rate is 1."""
        return self.as_tuple() == (1.0, 1.0, 1.0)

    def __str__(self) -> str:
        return "({:g}, {:g}, {:g})".format(*self.as_tuple())


FULL_RATES = SamplingRates(p_heads=1.0, p_mlp=1.0, p_layers=1.0)


def index_set_errors(
    label: str, indices: IndexSet, n: int, p: float | None
) -> list[str]:
    """
    Problems with one index set, as human-readable messages. Empty when
    the set is usable.

    Args:
        label: Name used in messages, e.g. "layer 2 heads".
        indices: The 0-based index set.
        n: Size of the universe the indices select from.
        p: The rate the set was sampled with. When given, the set size
            must equal `round_to_count(p, n)`.
    """
    if len(indices) == 0:
        return [f"{label}: index set is empty"]

    errors = []
    if any(i < 0 or i >= n for i in indices):
        errors.append(f"{label}: indices must lie in [0, {n})")
    if any(a >= b for a, b in zip(indices, indices[1:])):
        errors.append(f"{label}: indices must be sorted and duplicate-free")
    if p is not None:
        expected = round_to_count(p, n)
        if len(indices) != expected:
            errors.append(
                f"{label}: expected {expected} indices for rate {p:g}, "
                f"got {len(indices)}"
            )
    return errors


class SubnetworkMask(BaseModel):
    """
    The index sets sampled for one training step. Indices are 0-based.

    Layers outside `layer_set` are skipped; each active layer has its own
    head and MLP column sets.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    layer_set: IndexSet
    """Active layers, sorted."""

    head_sets: dict[int, IndexSet]
    """Sampled heads for each active layer."""

    mlp_sets: dict[int, IndexSet]
    """Sampled MLP intermediate columns for each active layer."""

    rates: SamplingRates
    """The rates the sets were drawn with."""

    @classmethod
    def full(cls, config: Any) -> SubnetworkMask:
        """
        The mask selecting every layer, head and column of `config`.

        Args:
            config: A `ModelConfig`.
        """
        heads = tuple(range(config.n_heads))
        columns = tuple(range(config.mlp_inner))
        layers = tuple(range(config.n_layers))
        return cls(
            layer_set=layers,
            head_sets={layer: heads for layer in layers},
            mlp_sets={layer: columns for layer in layers},
            rates=FULL_RATES,
        )

    def validate_for(self, config: Any) -> None:
        """
        Check the mask against a model configuration.

        Args:
            config: A `ModelConfig`.

        Raises:
            InvalidMaskError: Listing every problem found.
        """
        errors = index_set_errors(
            "layers", self.layer_set, config.n_layers, self.rates.p_layers
        )

        active = set(self.layer_set)
        for name, sets in (("head", self.head_sets), ("mlp", self.mlp_sets)):
            if set(sets) != active:
                errors.append(
                    f"{name} sets must be given for exactly the active layers"
                )

        for layer in self.layer_set:
            if layer in self.head_sets:
                errors += index_set_errors(
                    f"layer {layer} heads",
                    self.head_sets[layer],
                    config.n_heads,
                    self.rates.p_heads,
                )
            if layer in self.mlp_sets:
                errors += index_set_errors(
                    f"layer {layer} mlp columns",
                    self.mlp_sets[layer],
                    config.mlp_inner,
                    self.rates.p_mlp,
                )

        if errors:
            raise InvalidMaskError(errors)

    def active_fractions(self, config: Any) -> dict[int, tuple[float, float]]:
        """Actual sampled head and column fractions of each active layer."""
        return {
            layer: (
                len(self.head_sets[layer]) / config.n_heads,
                len(self.mlp_sets[layer]) / config.mlp_inner,
            )
            for layer in self.layer_set
        }
