from __future__ import annotations

from typing import Any

from pydantic import BaseModel, ConfigDict, Field, model_validator

ARCHITECTURES: dict[str, dict[str, int]] = {
    "gpt2-base": dict(
        n_layers=12,
        n_heads=12,
        head_dim=64,
        hidden=768,
        mlp_inner=3072,
        vocab=50257,
        seq_len=1024,
    ),
    "tinyllama-1.1b": dict(
        n_layers=22,
        n_heads=32,
        head_dim=64,
        hidden=2048,
        mlp_inner=5632,
        vocab=32000,
        seq_len=2048,
    ),
    "desk": dict(
        n_layers=4,
        n_heads=4,
        head_dim=32,
        hidden=128,
        mlp_inner=512,
        vocab=256,
        seq_len=64,
    ),
}
"""
Named geometries. `tinyllama-1.1b` is used for cost planning only; its
gated MLP is not modelled.
"""


class ModelConfig(BaseModel):
    """
    Static architecture of a decoder-only transformer.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_layers: int = Field(ge=1)
    """Number of transformer layers."""

    n_heads: int = Field(ge=1)
    """Attention heads per layer."""

    head_dim: int = Field(ge=1)
    """Width of each head's query, key and value projections."""

    hidden: int = Field(ge=1)
    """Residual stream width. Need not equal `n_heads * head_dim`."""

    mlp_inner: int = Field(ge=1)
    """MLP intermediate size."""

    vocab: int = Field(default=256, ge=1)
    """Vocabulary size. 256 for byte-level corpora."""

    seq_len: int = Field(ge=2)
    """Maximum sequence length (context)."""

    @model_validator(mode="before")
    @classmethod
    def _from_name(cls, value: Any) -> Any:
        if isinstance(value, dict) and "name" in value:
            values = dict(value)
            name = values.pop("name")
            if name not in ARCHITECTURES:
                raise ValueError(
                    f'architecture "{name}" not found, '
                    f"expected one of {sorted(ARCHITECTURES)}"
                )
            return {**ARCHITECTURES[name], **values}
        return value

    @property
    def attention_width(self) -> int:
        """The MHA inner width `n_heads * head_dim`."""
        return self.n_heads * self.head_dim

    @classmethod
    def named(cls, name: str, **overrides: int) -> ModelConfig:
        """
        A named architecture, optionally with some fields replaced.

        Raises:
            LookupError: If no architecture has that name.
        """
        try:
            values = ARCHITECTURES[name]
        except KeyError as ex:
            raise LookupError(f'Architecture "{name}" not found') from ex
        return cls(**{**values, **overrides})
