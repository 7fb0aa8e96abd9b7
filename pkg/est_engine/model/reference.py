"""
Plain numpy versions of the model, written without the autodiff engine
or any subnetwork logic. Used to check the engine's results.
"""

import math
from typing import Sequence

import numpy as np

from est_engine.autodiff.ops import GELU_COEFF, LAYER_NORM_EPS, SQRT_2_OVER_PI
from est_engine.model.params import ModelParams


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + LAYER_NORM_EPS) * gain + bias


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(SQRT_2_OVER_PI * (x + GELU_COEFF * x**3)))


def _attention(x: np.ndarray, w_q, w_k, w_v, w_o) -> np.ndarray:
    n = x.shape[0]
    q = np.einsum("nd,hdk->hnk", x, w_q)
    k = np.einsum("nd,hdk->hnk", x, w_k)
    v = np.einsum("nd,hdk->hnk", x, w_v)
    scores = np.einsum("hik,hjk->hij", q, k) / math.sqrt(w_q.shape[-1])
    scores = np.where(np.tril(np.ones((n, n), dtype=bool)), scores, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    return np.einsum("hij,hjk,hkd->id", weights, v, w_o)


def plain_logits(params: ModelParams, tokens: Sequence[int]) -> np.ndarray:
    """
    Logits of the complete model for a single sequence, shape `[N, V]`.
    """
    tokens = np.asarray(tokens, dtype=np.intp)
    positions = params.position_embedding.data[: len(tokens)]
    x = params.token_embedding.data[tokens] + positions
    for layer in params.layers:
        h = _layer_norm(x, layer.ln1_gain.data, layer.ln1_bias.data)
        x = x + _attention(
            h, layer.w_q.data, layer.w_k.data, layer.w_v.data, layer.w_o.data
        )
        h = _layer_norm(x, layer.ln2_gain.data, layer.ln2_bias.data)
        x = x + _gelu(h @ layer.w_1.data) @ layer.w_2.data.T
    x = _layer_norm(x, params.final_norm_gain.data, params.final_norm_bias.data)
    return x @ params.token_embedding.data.T


def masked_mlp_forward(
    params: ModelParams, x: np.ndarray, layer: int, columns: Sequence[int]
) -> np.ndarray:
    """
    The MLP of one layer computed over all columns, with the unsampled
    columns zeroed in both weight matrices and the output divided by the
    kept fraction.
    """
    weights = params.layers[layer]
    keep = np.zeros(weights.w_1.shape[1], dtype=bool)
    keep[list(columns)] = True
    w_1 = np.where(keep, weights.w_1.data, 0.0)
    w_2 = np.where(keep, weights.w_2.data, 0.0)
    return _gelu(x @ w_1) @ w_2.T / (keep.sum() / keep.size)
