"""
Training-dynamics probes: Hessian trace estimation, the loss drop at
stage transitions and loss-curve slopes at matched loss.
"""

from __future__ import annotations

import logging
from typing import Literal, Sequence
from warnings import warn

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from typeguard import typechecked

from est_engine.autodiff import ComputationTape
from est_engine.exceptions import InsufficientLogError, NonFiniteError
from est_engine.model import ModelParams, SubnetworkTransformer
from est_engine.sampler import STREAM_PROBE, SamplerSeed
from est_engine.scheduler import SamplingScheduler
from est_engine.training.loss_log import LossLog
from est_engine.types import GradFn

logger = logging.getLogger(__name__)

ProbeKind = Literal["rademacher", "gaussian"]

DEFAULT_FD_EPSILON = 1e-3
STABILITY_EPSILONS = (1e-3, 1e-4)
STABILITY_TOLERANCE = 0.1


class HessianTraceEstimate(BaseModel):
    """A Hutchinson estimate of the trace of the loss Hessian."""

    model_config = ConfigDict(frozen=True)

    value: float
    """Mean of the per-probe estimates."""

    n_probes: int = Field(ge=1)

    std_error: float = Field(ge=0)
    """Standard error of the mean. 0 for a single probe."""

    fd_epsilon: float = Field(gt=0)
    """Relative finite-difference step."""

    probe: ProbeKind = "rademacher"

    samples: list[float] = []
    """Per-probe values `v^T H v`."""


@typechecked
def hvp_central(
    grad_fn: GradFn, theta: np.ndarray, v: np.ndarray, step: float
) -> np.ndarray:
    """
    Hessian-vector product by central differences of the gradient:
    `(g(theta + step*v) - g(theta - step*v)) / (2*step)`.
    """
    plus = grad_fn(theta + step * v)
    minus = grad_fn(theta - step * v)
    return (plus - minus) / (2.0 * step)


def _probe(rng: np.random.Generator, size: int, kind: ProbeKind) -> np.ndarray:
    if kind == "gaussian":
        return rng.standard_normal(size)
    return rng.integers(0, 2, size=size).astype(np.float64) * 2.0 - 1.0


@typechecked
def hessian_trace(
    theta: np.ndarray,
    grad_fn: GradFn,
    n_probes: int,
    fd_epsilon: float = DEFAULT_FD_EPSILON,
    seed: SamplerSeed = SamplerSeed(),
    probe: ProbeKind = "rademacher",
) -> HessianTraceEstimate:
    """
    Estimate `Tr[H]` at `theta` as the mean of `v^T H v` over random
    probes `v`, with each `H v` taken from two gradient evaluations.

    The finite-difference step is `fd_epsilon * max(1, ||theta||) / ||v||`,
    so the perturbation `step * v` has norm `fd_epsilon * max(1, ||theta||)`
    whatever the number of parameters.
    Probes run one after another since `grad_fn` may reuse shared state.

    Args:
        theta: Flat parameter vector.
        grad_fn: Gradient of a fixed, deterministic loss.
        n_probes: Number of probes, at least 1.
        fd_epsilon: Relative finite-difference step.
        seed: Root of the probe stream, independent of training.
        probe: "rademacher" (entries +-1) or "gaussian".

    Raises:
        NonFiniteError: If a Hessian-vector product is not finite.

    Example:
        >>> a = np.arange(1.0, 11.0)
        >>> round(hessian_trace(np.zeros(10), lambda t: a * t, 256).value, 6)
        55.0
    """
    if n_probes < 1:
        raise ValueError(f"n_probes must be at least 1, got {n_probes}")

    theta = np.asarray(theta, dtype=np.float64)
    scale = fd_epsilon * max(1.0, float(np.linalg.norm(theta)))
    rng = seed.generator(STREAM_PROBE)

    samples = []
    for index in range(n_probes):
        v = _probe(rng, theta.size, probe)
        hv = hvp_central(grad_fn, theta, v, scale / float(np.linalg.norm(v)))
        if not np.isfinite(hv).all():
            raise NonFiniteError(f"Hessian-vector product of probe {index}")
        samples.append(float(v @ hv))

    values = np.asarray(samples)
    std_error = float(values.std(ddof=1) / np.sqrt(n_probes)) if n_probes > 1 else 0.0
    return HessianTraceEstimate(
        value=float(values.mean()),
        n_probes=n_probes,
        std_error=std_error,
        fd_epsilon=fd_epsilon,
        probe=probe,
        samples=samples,
    )


def model_gradient_fn(
    params: ModelParams, batches: Sequence[tuple[np.ndarray, np.ndarray]]
) -> GradFn:
    """
    Gradient of the complete model's mean loss over fixed batches, as a
    function of the flat parameter vector. Each call overwrites `params`.
    """
    model = SubnetworkTransformer(params)

    def grad_fn(theta: np.ndarray) -> np.ndarray:
        params.assign_flat(theta.astype(params.token_embedding.data.dtype))
        params.zero_grad()
        for inputs, targets in batches:
            with ComputationTape() as tape:
                loss = model.loss(inputs, targets)
            tape.backward(loss)
        grad = params.flat_grad().astype(np.float64) / len(batches)
        if not np.isfinite(grad).all():
            raise NonFiniteError("gradient during Hessian probing")
        return grad

    return grad_fn


def model_hessian_trace(
    params: ModelParams,
    batches: Sequence[tuple[np.ndarray, np.ndarray]],
    n_probes: int,
    fd_epsilon: float = DEFAULT_FD_EPSILON,
    seed: SamplerSeed = SamplerSeed(),
    probe: ProbeKind = "rademacher",
) -> HessianTraceEstimate:
    """
    Hessian trace of a model's loss on fixed batches. `params` are
    restored afterwards.
    """
    theta = params.flatten()
    try:
        return hessian_trace(
            theta.astype(np.float64),
            model_gradient_fn(params, batches),
            n_probes,
            fd_epsilon,
            seed,
            probe,
        )
    finally:
        params.assign_flat(theta)


class StabilityReport(BaseModel):
    """Estimates of one trace at several finite-difference steps."""

    model_config = ConfigDict(frozen=True)

    estimates: list[HessianTraceEstimate]
    relative_gap: float
    """Largest difference between estimates, relative to the first."""
    stable: bool


@typechecked
def epsilon_stability(
    theta: np.ndarray,
    grad_fn: GradFn,
    n_probes: int,
    seed: SamplerSeed = SamplerSeed(),
    epsilons: Sequence[float] = STABILITY_EPSILONS,
    tolerance: float = STABILITY_TOLERANCE,
) -> StabilityReport:
    """
    Repeat `hessian_trace` with the same probes at each step in
    `epsilons`. Estimates further apart than `tolerance` (relative) are
    flagged with a warning.
    """
    estimates = [hessian_trace(theta, grad_fn, n_probes, eps, seed) for eps in epsilons]
    values = [e.value for e in estimates]
    reference = abs(values[0]) or 1.0
    gap = (max(values) - min(values)) / reference
    stable = gap <= tolerance
    if not stable:
        message = (
            f"Hessian trace changes by {100 * gap:.1f}% across finite-difference "
            f"steps {list(epsilons)}"
        )
        logger.warning(message)
        warn(message, UserWarning, stacklevel=2)
    return StabilityReport(estimates=estimates, relative_gap=gap, stable=stable)


class TransitionReport(BaseModel):
    """Mean loss just before and just after a stage transition."""

    model_config = ConfigDict(frozen=True)

    step: int
    """Last step of the earlier stage."""

    pre_mean: float
    """Mean loss over the `window` steps ending at `step`."""

    post_mean: float
    """Mean loss over the `window` steps after `step`."""

    window: int

    @property
    def drop(self) -> float:
        """`pre_mean - post_mean`. Negative when the loss rises."""
        return self.pre_mean - self.post_mean


@typechecked
def transition_drop(
    log: LossLog,
    sched: SamplingScheduler | Sequence[int] | None = None,
    window: int = 50,
) -> list[TransitionReport]:
    """
    Measure the loss change at every internal stage transition.

    Args:
        log: A log with one record per step around each transition.
        sched: The scheduler, or the transition steps themselves. Taken
            from the log's stage column when omitted.
        window: Steps averaged on each side.

    Raises:
        InsufficientLogError: If a window is not fully logged or would
            reach over a neighbouring transition.
    """
    if window < 1:
        raise ValueError(f"window must be at least 1, got {window}")

    if sched is None:
        boundaries = log.stage_end_steps()
    elif isinstance(sched, SamplingScheduler):
        boundaries = list(sched.end_steps[:-1])
    else:
        boundaries = sorted(sched)

    frame = log.to_frame()
    steps = frame["step"].to_numpy()
    losses = frame["loss"].to_numpy(dtype=np.float64)

    reports = []
    for index, boundary in enumerate(boundaries):
        previous = boundaries[index - 1] if index > 0 else 0
        following = boundaries[index + 1] if index + 1 < len(boundaries) else None
        if boundary - window < previous or (
            following is not None and boundary + window > following
        ):
            raise InsufficientLogError(
                f"window of {window} steps around transition {boundary} "
                "overlaps a neighbouring transition"
            )

        pre = (steps > boundary - window) & (steps <= boundary)
        post = (steps > boundary) & (steps <= boundary + window)
        if pre.sum() != window or post.sum() != window:
            raise InsufficientLogError(
                f"log does not cover {window} steps on both sides of "
                f"transition {boundary}"
            )
        reports.append(
            TransitionReport(
                step=boundary,
                pre_mean=float(losses[pre].mean()),
                post_mean=float(losses[post].mean()),
                window=window,
            )
        )
    return reports


class SlopeComparison(BaseModel):
    """Loss slopes of two runs where each first reaches the same loss."""

    model_config = ConfigDict(frozen=True)

    loss_level: float
    step_a: int
    """Step where the smoothed loss of the first log reaches the level."""
    slope_a: float
    step_b: int
    slope_b: float


def _slope_at_level(
    log: LossLog, level: float, window: int, smoothing: int, label: str
) -> tuple[int, float]:
    frame = log.to_frame()
    smoothed = frame["loss"].rolling(smoothing, min_periods=smoothing).mean().to_numpy()
    crossed = np.flatnonzero(smoothed <= level)
    if crossed.size == 0:
        raise InsufficientLogError(f"{label}: smoothed loss never reaches {level}")

    centre = int(frame["step"].iloc[crossed[0]])
    half = window // 2
    steps = frame["step"]
    selected = frame[(steps >= centre - half) & (steps <= centre + half)]
    if len(selected) < 2:
        raise InsufficientLogError(f"{label}: too few records around step {centre}")
    slope = np.polyfit(
        selected["step"].to_numpy(dtype=np.float64),
        selected["loss"].to_numpy(dtype=np.float64),
        1,
    )[0]
    return centre, float(slope)


@typechecked
def slope_compare(
    log_a: LossLog,
    log_b: LossLog,
    loss_level: float,
    window: int = 100,
    smoothing: int = 50,
) -> SlopeComparison:
    """
    Least-squares slope of each log's loss over `window` steps centred
    where its trailing-mean loss (over `smoothing` steps) first reaches
    `loss_level`.

    Raises:
        InsufficientLogError: If either log never reaches the level.
    """
    step_a, slope_a = _slope_at_level(
        log_a, loss_level, window, smoothing, "first log"
    )
    step_b, slope_b = _slope_at_level(
        log_b, loss_level, window, smoothing, "second log"
    )
    return SlopeComparison(
        loss_level=loss_level,
        step_a=step_a,
        slope_a=slope_a,
        step_b=step_b,
        slope_b=slope_b,
    )
