"""
Differentiable primitives. Every operation checks shapes before it
computes, records itself on the active tape when one of its inputs needs
a gradient, and returns a new tensor.
"""

import math
from typing import Sequence

import numpy as np

from est_engine.autodiff.tensor import BackwardFn, Tensor, active_tape, get_dtype
from est_engine.exceptions import NonFiniteError, ShapeError, TokenRangeError

LAYER_NORM_EPS = 1e-5
GELU_COEFF = 0.044715
SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def _result(
    data: np.ndarray,
    inputs: tuple[Tensor, ...],
    name: str,
    backward: BackwardFn,
) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(name, inputs, out, backward)
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(name: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(name, a.shape, b.shape) from None


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product over the last two axes, broadcasting leading axes.

    Raises:
        ShapeError: If either input has fewer than two axes, the inner
            dimensions differ or the leading axes do not broadcast.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def backward(grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        grad_a = grad @ np.swapaxes(b.data, -1, -2)
        grad_b = np.swapaxes(a.data, -1, -2) @ grad
        return unbroadcast(grad_a, a.shape), unbroadcast(grad_b, b.shape)

    return _result(a.data @ b.data, (a, b), "matmul", backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    _broadcast_shape("add", a, b)

    def backward(grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return unbroadcast(grad, a.shape), unbroadcast(grad, b.shape)

    return _result(a.data + b.data, (a, b), "add", backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    _broadcast_shape("mul", a, b)

    def backward(grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return unbroadcast(grad * b.data, a.shape), unbroadcast(grad * a.data, b.shape)

    return _result(a.data * b.data, (a, b), "mul", backward)


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply every entry by a constant."""
    factor = get_dtype()(factor)

    def backward(grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * factor,)

    return _result(a.data * factor, (a,), "scale", backward)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise ShapeError("transpose", a.shape)

    def backward(grad: np.ndarray) -> tuple[np.ndarray]:
        return (np.swapaxes(grad, -1, -2),)

    return _result(np.swapaxes(a.data, -1, -2), (a,), "transpose", backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    """View the same values under a new shape."""
    shape = tuple(shape)
    if math.prod(shape) != a.size:
        raise ShapeError("reshape", a.shape, shape)

    def backward(grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad.reshape(a.shape),)

    return _result(a.data.reshape(shape), (a,), "reshape", backward)


def index_select(a: Tensor, axis: int, indices: np.ndarray) -> Tensor:
    """
    Gather the entries at `indices` along `axis`. Entries that are not
    gathered receive exactly zero gradient.

    Raises:
        IndexError: If an index falls outside the axis.
    """
    axis = axis % a.ndim
    indices = np.asarray(indices, dtype=np.intp)
    if indices.size and (indices.min() < 0 or indices.max() >= a.shape[axis]):
        raise IndexError(
            f"index_select: indices out of range for axis {axis} of shape {a.shape}"
        )

    def backward(grad: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros_like(a.data)
        np.add.at(np.moveaxis(full, axis, 0), indices, np.moveaxis(grad, axis, 0))
        return (full,)

    return _result(np.take(a.data, indices, axis=axis), (a,), "index_select", backward)


def sum_all(a: Tensor) -> Tensor:
    """Sum of all entries as a scalar tensor."""

    def backward(grad: np.ndarray) -> tuple[np.ndarray]:
        return (np.broadcast_to(grad, a.shape).copy(),)

    return _result(np.asarray(a.data.sum()), (a,), "sum_all", backward)


def sum_axis(a: Tensor, axis: int) -> Tensor:
    """Sum over one axis, dropping it."""
    axis = axis % a.ndim

    def backward(grad: np.ndarray) -> tuple[np.ndarray]:
        return (np.broadcast_to(np.expand_dims(grad, axis), a.shape).copy(),)

    return _result(a.data.sum(axis=axis), (a,), "sum_axis", backward)


def causal_mask(scores: Tensor) -> Tensor:
    """
    Set every entry above the diagonal of the last two (square) axes to
    -inf, so that position i only attends to positions j <= i.
    """
    if scores.ndim < 2 or scores.shape[-1] != scores.shape[-2]:
        raise ShapeError("causal_mask", scores.shape)
    n = scores.shape[-1]
    keep = np.tril(np.ones((n, n), dtype=bool))

    def backward(grad: np.ndarray) -> tuple[np.ndarray]:
        return (np.where(keep, grad, 0),)

    masked = np.where(keep, scores.data, -np.inf)
    return _result(masked, (scores,), "causal_mask", backward)


def softmax_rows(x: Tensor) -> Tensor:
    """
    Softmax over the last axis, stabilised by subtracting each row's
    maximum. Entries equal to -inf get probability zero.

    Raises:
        NonFiniteError: If the input contains NaN.
    """
    if np.isnan(x.data).any():
        raise NonFiniteError("softmax input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    probs = exps / exps.sum(axis=-1, keepdims=True)

    def backward(grad: np.ndarray) -> tuple[np.ndarray]:
        inner = (grad * probs).sum(axis=-1, keepdims=True)
        return (probs * (grad - inner),)

    return _result(probs, (x,), "softmax_rows", backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """
    Normalise each row of the last axis to zero mean and unit variance,
    then apply `gain` and `bias`. Epsilon is fixed at 1e-5.
    """
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError("layer_norm", x.shape, gain.shape, bias.shape)

    mean = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mean
    var = (centred * centred).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    normed = centred * inv_std

    def backward(grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        grad_normed = grad * gain.data
        grad_x = inv_std * (
            grad_normed
            - grad_normed.mean(axis=-1, keepdims=True)
            - normed * (grad_normed * normed).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(grad.ndim - 1))
        return grad_x, (grad * normed).sum(axis=lead), grad.sum(axis=lead)

    out = normed * gain.data + bias.data
    return _result(out, (x, gain, bias), "layer_norm", backward)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximation GELU."""
    inner = SQRT_2_OVER_PI * (x.data + GELU_COEFF * x.data**3)
    tanh = np.tanh(inner)

    def backward(grad: np.ndarray) -> tuple[np.ndarray]:
        d_inner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEFF * x.data**2)
        local = 0.5 * (1.0 + tanh) + 0.5 * x.data * (1.0 - tanh * tanh) * d_inner
        return (grad * local,)

    return _result(0.5 * x.data * (1.0 + tanh), (x,), "gelu", backward)


def _check_ids(ids: np.ndarray, vocab: int) -> None:
    flat = ids.reshape(-1)
    bad = np.flatnonzero((flat < 0) | (flat >= vocab))
    if bad.size:
        position = int(bad[0])
        raise TokenRangeError(position, int(flat[position]), vocab)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """
    Rows of `table` selected by integer `ids` of any shape; the result has
    shape `ids.shape + (d,)`.

    Raises:
        TokenRangeError: If an id is outside [0, V).
    """
    if table.ndim != 2:
        raise ShapeError("embedding_lookup", table.shape)
    ids = np.asarray(ids, dtype=np.intp)
    _check_ids(ids, table.shape[0])

    def backward(grad: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), grad.reshape(-1, table.shape[1]))
        return (full,)

    return _result(table.data[ids], (table,), "embedding_lookup", backward)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """
    Mean token-level negative log-likelihood in nats.

    Args:
        logits: Scores of shape `targets.shape + (V,)`.
        targets: Integer target ids.

    Raises:
        ShapeError: If the leading shapes disagree.
        TokenRangeError: If a target is outside [0, V).
    """
    targets = np.asarray(targets, dtype=np.intp)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError("cross_entropy", logits.shape, targets.shape)
    vocab = logits.shape[-1]
    _check_ids(targets, vocab)

    flat_logits = logits.data.reshape(-1, vocab)
    flat_targets = targets.reshape(-1)
    count = flat_targets.size

    shifted = flat_logits - flat_logits.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(count)
    loss = -log_probs[rows, flat_targets].mean()

    def backward(grad: np.ndarray) -> tuple[np.ndarray]:
        local = np.exp(log_probs)
        local[rows, flat_targets] -= 1.0
        return ((local * (grad / count)).reshape(logits.shape),)

    return _result(np.asarray(loss), (logits,), "cross_entropy", backward)
