from __future__ import annotations

import copy
from dataclasses import dataclass, fields

import numpy as np
from typeguard import typechecked

from est_engine.autodiff import Tensor, get_dtype
from est_engine.model.config import ModelConfig

INIT_STD = 0.02

DECAYED_WEIGHTS = ("w_q", "w_k", "w_v", "w_o", "w_1", "w_2")
"""Weight decay applies to these matrices only; never to embeddings or norms."""


@dataclass
class LayerParams:
    """
    Parameters of one transformer layer.

    Head projections are stacked along the first axis so any subset of
    heads can be gathered by index. MLP matrices are stored `[d, N_M]` so
    columns can be gathered directly.
    """

    ln1_gain: Tensor
    ln1_bias: Tensor
    w_q: Tensor
    """`[N_H, d, d_k]`"""
    w_k: Tensor
    """`[N_H, d, d_k]`"""
    w_v: Tensor
    """`[N_H, d, d_k]`"""
    w_o: Tensor
    """`[N_H, d_k, d]`"""
    ln2_gain: Tensor
    ln2_bias: Tensor
    w_1: Tensor
    """`[d, N_M]`"""
    w_2: Tensor
    """`[d, N_M]`"""

    def named(self) -> list[tuple[str, Tensor]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]


@dataclass
class ModelParams:
    """
    Every trainable tensor of the model. The output projection is tied
    to `token_embedding`.
    """

    config: ModelConfig
    token_embedding: Tensor
    """`[V, d]`"""
    position_embedding: Tensor
    """`[N, d]`"""
    layers: list[LayerParams]
    final_norm_gain: Tensor
    final_norm_bias: Tensor

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """Every parameter with its dotted name, in declaration order."""
        named = [
            ("token_embedding", self.token_embedding),
            ("position_embedding", self.position_embedding),
        ]
        for index, layer in enumerate(self.layers):
            named += [(f"layers.{index}.{name}", t) for name, t in layer.named()]
        named += [
            ("final_norm_gain", self.final_norm_gain),
            ("final_norm_bias", self.final_norm_bias),
        ]
        return named

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    @staticmethod
    def decays(name: str) -> bool:
        """Whether weight decay applies to the parameter called `name`."""
        return name.rsplit(".", 1)[-1] in DECAYED_WEIGHTS

    @property
    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters())

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()

    def flatten(self) -> np.ndarray:
        """All parameter values as one vector, in declaration order."""
        return np.concatenate([t.data.reshape(-1) for t in self.parameters()])

    def flat_grad(self) -> np.ndarray:
        """All gradients as one vector. Missing gradients count as zero."""
        return np.concatenate(
            [
                (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
                for t in self.parameters()
            ]
        )

    def assign_flat(self, vector: np.ndarray) -> None:
        """
        Overwrite every parameter from one vector laid out as `flatten()`.

        Raises:
            ValueError: If the vector has the wrong length.
        """
        if vector.shape != (self.num_parameters,):
            raise ValueError(
                f"Expected a vector of {self.num_parameters} values, "
                f"got shape {vector.shape}"
            )
        offset = 0
        for t in self.parameters():
            t.data[...] = vector[offset : offset + t.size].reshape(t.shape)
            offset += t.size

    def converted(self) -> ModelParams:
        """
        A copy at the current engine precision, e.g. after
        `set_precision("fp64")`.
        """
        clone = self.snapshot()
        for t in clone.parameters():
            t.data = np.ascontiguousarray(t.data, dtype=get_dtype())
        return clone

    def snapshot(self) -> ModelParams:
        """An independent copy of the values, without gradients."""
        clone = copy.deepcopy(self)
        for t in clone.parameters():
            t.grad = None
            t.tape = None
        return clone


@typechecked
def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """
    Randomly initialise a model.

    Weights and embeddings are drawn from normal(0, 0.02), in declaration
    order. Projections writing into the residual stream (`w_o`, `w_2`) are
    further scaled by 1/sqrt(2 * N_L). Norm gains start at 1 and biases
    at 0.

    Args:
        config: The model architecture.
        rng: Source of randomness, normally the initialisation stream of
            the run seed.
    """
    d, h, dk = config.hidden, config.n_heads, config.head_dim
    residual_std = INIT_STD / np.sqrt(2.0 * config.n_layers)

    def normal(shape: tuple[int, ...], std: float = INIT_STD) -> Tensor:
        return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)

    def ones() -> Tensor:
        return Tensor(np.ones(d, dtype=get_dtype()), requires_grad=True)

    def zeros() -> Tensor:
        return Tensor(np.zeros(d, dtype=get_dtype()), requires_grad=True)

    token_embedding = normal((config.vocab, d))
    position_embedding = normal((config.seq_len, d))
    layers = []
    for _ in range(config.n_layers):
        layers.append(
            LayerParams(
                ln1_gain=ones(),
                ln1_bias=zeros(),
                w_q=normal((h, d, dk)),
                w_k=normal((h, d, dk)),
                w_v=normal((h, d, dk)),
                w_o=normal((h, dk, d), residual_std),
                ln2_gain=ones(),
                ln2_bias=zeros(),
                w_1=normal((d, config.mlp_inner)),
                w_2=normal((d, config.mlp_inner), residual_std),
            )
        )

    params = ModelParams(
        config=config,
        token_embedding=token_embedding,
        position_embedding=position_embedding,
        layers=layers,
        final_norm_gain=ones(),
        final_norm_bias=zeros(),
    )
    for name, t in params.named_parameters():
        t.name = name
    return params
