from __future__ import annotations

from contextvars import ContextVar
from dataclasses import dataclass
from typing import Any, Callable, Literal, Sequence

import numpy as np

from est_engine.exceptions import ConfigError, TapeConsumedError

Precision = Literal["fp32", "fp64"]

PRECISIONS: dict[str, type[np.floating]] = {
    "fp32": np.float32,
    "fp64": np.float64,
}
"""Engine-wide float types, keyed by their config name."""

_precision: list[Precision] = ["fp32"]


def set_precision(precision: Precision) -> None:
    """
    Select the float type used for every tensor created afterwards.

    Args:
        precision: Either "fp32" (default) or "fp64".

    Raises:
        ConfigError: If the precision name is unknown.
    """
    if precision not in PRECISIONS:
        raise ConfigError(
            f"Unknown precision '{precision}', expected one of {sorted(PRECISIONS)}"
        )
    _precision[0] = precision


def get_precision() -> Precision:
    """The current engine-wide precision name."""
    return _precision[0]


def get_dtype() -> type[np.floating]:
    """The numpy float type matching the current precision."""
    return PRECISIONS[_precision[0]]


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]
"""
Maps the gradient of an operation's output to the gradients of its
inputs, in input order. `None` marks an input that needs no gradient.
"""


class Tensor:
    """
    A dense, row-major array of floats with an optional gradient.

    Args:
        data: Array-like values. Converted to the engine precision.
        requires_grad: Whether gradients should flow into this tensor.
        name: Optional name, used in diagnostics.
    """

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: str | None = None,
    ) -> None:
        self.data: np.ndarray = np.ascontiguousarray(data, dtype=get_dtype())
        """The values."""

        self.grad: np.ndarray | None = None
        """Accumulated gradient, same shape as `data`, once one exists."""

        self.requires_grad = requires_grad
        """Whether backward passes accumulate into `grad`."""

        self.name = name
        """Optional name."""

        self.tape: ComputationTape | None = None
        """The tape that recorded the operation producing this tensor."""

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        """The value of a single-element tensor as a Python float."""
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        """Reset the gradient to zeros."""
        self.grad = np.zeros_like(self.data)

    def accumulate_grad(self, grad: np.ndarray) -> None:
        """Add `grad` to the stored gradient."""
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad += grad

    def __add__(self, other: Tensor) -> Tensor:
        from est_engine.autodiff import ops

        return ops.add(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        from est_engine.autodiff import ops

        return ops.mul(self, other)

    def __matmul__(self, other: Tensor) -> Tensor:
        from est_engine.autodiff import ops

        return ops.matmul(self, other)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{label})"


@dataclass
class TapeEntry:
    """One recorded operation."""

    name: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


_ACTIVE_TAPE: ContextVar[ComputationTape | None] = ContextVar(
    "est_active_tape", default=None
)


class ComputationTape:
    """
    Records operations in execution order so that gradients can be
    propagated in exact reverse order. Operations record only while the
    tape is active:

    Example:
        >>> with ComputationTape() as tape:
        ...     loss = ops.sum_all(ops.mul(x, x))
        >>> tape.backward(loss)
        >>> x.grad  # 2 * x.data
    """

    def __init__(self) -> None:
        self.entries: list[TapeEntry] = []
        self.consumed = False
        self._token = None

    def __enter__(self) -> ComputationTape:
        if self.consumed:
            raise TapeConsumedError("Cannot record on a consumed tape")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc_info: Any) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.entries)

    def record(
        self,
        name: str,
        inputs: tuple[Tensor, ...],
        output: Tensor,
        backward: BackwardFn,
    ) -> None:
        """Append an operation. Inputs must already exist on the tape or be leaves."""
        output.tape = self
        self.entries.append(TapeEntry(name, inputs, output, backward))

    def backward(self, loss: Tensor) -> None:
        """
        Propagate gradients from a scalar loss to every tensor that
        requires them, then consume the tape.

        Args:
            loss: A single-element tensor recorded on this tape.

        Raises:
            TapeConsumedError: If the tape was already consumed or did
                not record `loss`.
        """
        if self.consumed:
            raise TapeConsumedError("backward() was already called on this tape")
        if loss.tape is not self:
            raise TapeConsumedError("The loss was not recorded on this tape")
        if loss.size != 1:
            raise TapeConsumedError(
                f"backward() needs a single-element loss, got shape {loss.shape}"
            )

        loss.grad = np.ones_like(loss.data)

        for entry in reversed(self.entries):
            grad = entry.output.grad
            if grad is None:
                continue
            input_grads = entry.backward(grad)
            for tensor, input_grad in zip(entry.inputs, input_grads):
                if input_grad is not None and tensor.requires_grad:
                    tensor.accumulate_grad(input_grad)

        self.entries.clear()
        self.consumed = True


def active_tape() -> ComputationTape | None:
    """The tape currently recording in this context, if any."""
    return _ACTIVE_TAPE.get()


def backward(loss: Tensor) -> None:
    """
    Run the backward pass of the tape that produced `loss`.

    Raises:
        TapeConsumedError: If `loss` was not produced under a tape, or its
            tape has already been consumed.
    """
    if loss.tape is None:
        raise TapeConsumedError("The loss was not produced by a recorded forward pass")
    loss.tape.backward(loss)
