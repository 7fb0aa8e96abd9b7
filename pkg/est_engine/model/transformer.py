from __future__ import annotations

import logging
import math
from typing import Sequence

import numpy as np

from est_engine.autodiff import Tensor, ops
from est_engine.exceptions import InvalidMaskError, SequenceLengthError
from est_engine.masks import SubnetworkMask, index_set_errors
from est_engine.model.params import ModelParams

logger = logging.getLogger(__name__)


def _checked(
    label: str, indices: Sequence[int] | None, n: int, p: float | None
) -> tuple[int, ...] | None:
    if indices is None:
        return None
    indices = tuple(int(i) for i in indices)
    errors = index_set_errors(label, indices, n, p)
    if errors:
        raise InvalidMaskError(errors)
    return indices


class SubnetworkTransformer:
    """
    A decoder-only transformer that runs either complete or restricted
    to a sampled subnetwork.

    Sampled heads and MLP columns are gathered out of the full weights,
    so a smaller subnetwork does less work. The output of a sampled
    module is divided by the fraction of units it kept, which keeps its
    expectation over subsets equal to the complete module. Layers outside
    the mask's layer set are skipped without rescaling.

    Token inputs may be a single sequence `[N]` or a batch `[B, N]`.

    Args:
        params: The parameters to run with. They are used in place, not
            copied.
    """

    def __init__(self, params: ModelParams):
        self.params = params
        self.config = params.config

    def mha_forward(
        self,
        x: Tensor,
        layer: int,
        heads: Sequence[int] | None = None,
        p_heads: float | None = None,
    ) -> Tensor:
        """
        Causal multi-head attention of one layer over the heads in
        `heads`, scaled by N_H / |heads|. All heads are used when `heads`
        is None.

        Args:
            x: Input of shape `[..., N, d]`.
            layer: 0-based layer index.
            heads: Sorted 0-based head indices.
            p_heads: The rate `heads` was sampled with. When given, the
                number of heads must match it.

        Raises:
            InvalidMaskError: If `heads` is empty, unsorted, out of range
                or inconsistent with `p_heads`.
        """
        n_heads = self.config.n_heads
        heads = _checked(f"layer {layer} heads", heads, n_heads, p_heads)
        weights = self.params.layers[layer]

        w_q, w_k, w_v, w_o = weights.w_q, weights.w_k, weights.w_v, weights.w_o
        sampled = heads is not None and len(heads) < n_heads
        if sampled:
            index = np.asarray(heads)
            w_q, w_k, w_v, w_o = (
                ops.index_select(w, 0, index) for w in (w_q, w_k, w_v, w_o)
            )

        # [..., N, d] -> [..., 1, N, d] broadcasts against the head axis.
        xh = ops.reshape(x, x.shape[:-2] + (1,) + x.shape[-2:])
        q = ops.matmul(xh, w_q)
        k = ops.matmul(xh, w_k)
        v = ops.matmul(xh, w_v)

        scale = 1.0 / math.sqrt(self.config.head_dim)
        scores = ops.scale(ops.matmul(q, ops.transpose(k)), scale)
        attention = ops.softmax_rows(ops.causal_mask(scores))
        per_head = ops.matmul(ops.matmul(attention, v), w_o)
        out = ops.sum_axis(per_head, -3)

        if sampled:
            out = ops.scale(out, n_heads / len(heads))
        return out

    def mlp_forward(
        self,
        x: Tensor,
        layer: int,
        columns: Sequence[int] | None = None,
        p_mlp: float | None = None,
    ) -> Tensor:
        """
        The MLP of one layer restricted to the intermediate `columns`,
        scaled by N_M / |columns|. All columns are used when `columns` is
        None.

        Raises:
            InvalidMaskError: If `columns` is empty, unsorted, out of
                range or inconsistent with `p_mlp`.
        """
        mlp_inner = self.config.mlp_inner
        columns = _checked(f"layer {layer} mlp columns", columns, mlp_inner, p_mlp)
        weights = self.params.layers[layer]

        w_1, w_2 = weights.w_1, weights.w_2
        sampled = columns is not None and len(columns) < mlp_inner
        if sampled:
            index = np.asarray(columns)
            w_1 = ops.index_select(w_1, 1, index)
            w_2 = ops.index_select(w_2, 1, index)

        hidden = ops.gelu(ops.matmul(x, w_1))
        out = ops.matmul(hidden, ops.transpose(w_2))

        if sampled:
            out = ops.scale(out, mlp_inner / len(columns))
        return out

    def layer_forward(
        self, x: Tensor, layer: int, mask: SubnetworkMask | None = None
    ) -> Tensor:
        """
        One pre-norm residual layer. Returns `x` itself when the mask
        skips the layer.
        """
        if not 0 <= layer < self.config.n_layers:
            raise InvalidMaskError(
                f"layer {layer} is outside [0, {self.config.n_layers})"
            )

        heads = columns = None
        p_heads = p_mlp = None
        if mask is not None:
            if layer not in mask.layer_set:
                return x
            heads, columns = mask.head_sets[layer], mask.mlp_sets[layer]
            p_heads, p_mlp = mask.rates.p_heads, mask.rates.p_mlp

        weights = self.params.layers[layer]
        normed = ops.layer_norm(x, weights.ln1_gain, weights.ln1_bias)
        h = ops.add(x, self.mha_forward(normed, layer, heads, p_heads))
        normed = ops.layer_norm(h, weights.ln2_gain, weights.ln2_bias)
        return ops.add(h, self.mlp_forward(normed, layer, columns, p_mlp))

    def forward(self, tokens: np.ndarray, mask: SubnetworkMask | None = None) -> Tensor:
        """
        Logits for every position.

        Args:
            tokens: Integer ids of shape `[N]` or `[B, N]`.
            mask: The subnetwork to run. None runs the complete model.

        Returns:
            Logits of shape `tokens.shape + (V,)`.

        Raises:
            SequenceLengthError: If N exceeds the configured sequence length.
            InvalidMaskError: If the mask does not fit the model.
            TokenRangeError: If an id is outside the vocabulary.
        """
        tokens = np.asarray(tokens, dtype=np.intp)
        length = tokens.shape[-1]
        if length > self.config.seq_len:
            raise SequenceLengthError(length, self.config.seq_len)
        if mask is not None:
            mask.validate_for(self.config)

        params = self.params
        x = ops.add(
            ops.embedding_lookup(params.token_embedding, tokens),
            ops.index_select(params.position_embedding, 0, np.arange(length)),
        )
        for layer in range(self.config.n_layers):
            x = self.layer_forward(x, layer, mask)

        x = ops.layer_norm(x, params.final_norm_gain, params.final_norm_bias)
        return ops.matmul(x, ops.transpose(params.token_embedding))

    def loss(
        self,
        tokens: np.ndarray,
        targets: np.ndarray,
        mask: SubnetworkMask | None = None,
    ) -> Tensor:
        """Mean next-token cross entropy in nats."""
        return ops.cross_entropy(self.forward(tokens, mask), targets)
