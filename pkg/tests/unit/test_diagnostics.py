import numpy as np
import pytest

from est_engine.diagnostics import (
    epsilon_stability,
    hessian_trace,
    hvp_central,
    model_hessian_trace,
    slope_compare,
    transition_drop,
)
from est_engine.exceptions import InsufficientLogError, NonFiniteError
from est_engine.sampler import SamplerSeed
from est_engine.scheduler import SamplingScheduler
from est_engine.training.data import eval_batches
from est_engine.training.loss_log import LossLog

DIAGONAL = np.arange(1.0, 11.0)


def _symmetric(n: int, seed: int = 0) -> np.ndarray:
    b = np.random.default_rng(seed).standard_normal((n, n))
    return b + b.T


def _log(losses, stages=None) -> LossLog:
    log = LossLog()
    for index, loss in enumerate(losses):
        stage = 1 if stages is None else stages[index]
        log.append(index + 1, stage, float(loss), 1e-3, float(index + 1))
    return log


def test_hvp_central__quadratic():
    a = _symmetric(5)
    v = np.ones(5)

    hv = hvp_central(lambda t: a @ t, np.zeros(5), v, 1e-3)

    np.testing.assert_allclose(hv, a @ v, rtol=1e-9)


def test_hessian_trace__diagonal_is_exact():
    estimate = hessian_trace(np.zeros(10), lambda t: DIAGONAL * t, 8)

    assert estimate.value == pytest.approx(55.0, rel=1e-9)
    assert estimate.std_error == pytest.approx(0.0, abs=1e-9)
    assert estimate.n_probes == 8
    assert len(estimate.samples) == 8


def test_hessian_trace__single_probe():
    estimate = hessian_trace(np.zeros(10), lambda t: DIAGONAL * t, 1)

    assert estimate.std_error == 0.0


def test_hessian_trace__unbiased_with_gaussian_probes():
    estimate = hessian_trace(
        np.zeros(10), lambda t: DIAGONAL * t, 4096, probe="gaussian"
    )

    assert estimate.probe == "gaussian"
    assert abs(estimate.value - 55.0) < 5 * estimate.std_error


def test_hessian_trace__error_shrinks_with_probes():
    a = _symmetric(20)
    grad_fn = lambda t: a @ t  # noqa: E731

    few = hessian_trace(np.zeros(20), grad_fn, 16, seed=SamplerSeed(seed=1))
    many = hessian_trace(np.zeros(20), grad_fn, 1024, seed=SamplerSeed(seed=1))

    assert many.std_error < few.std_error
    assert abs(many.value - np.trace(a)) < 5 * many.std_error


def test_hessian_trace__same_seed_same_probes():
    a = _symmetric(6)

    first = hessian_trace(np.zeros(6), lambda t: a @ t, 4, seed=SamplerSeed(seed=3))
    second = hessian_trace(np.zeros(6), lambda t: a @ t, 4, seed=SamplerSeed(seed=3))

    assert first.samples == second.samples


def test_hessian_trace__step_scales_with_theta():
    # A cubic term makes the central difference depend on the step size.
    grad_fn = lambda t: t**3  # noqa: E731
    theta = np.full(4, 50.0)

    estimate = hessian_trace(theta, grad_fn, 2, fd_epsilon=1e-3)

    # Rademacher probes have norm sqrt(n).
    step = 1e-3 * np.linalg.norm(theta) / np.sqrt(theta.size)
    assert estimate.value == pytest.approx(4 * (3 * 50.0**2 + step**2), rel=1e-9)


def test_hessian_trace__perturbation_independent_of_size():
    """
    Verify that the finite-difference error per parameter does not grow with
    the number of parameters.
    """
    grad_fn = lambda t: t**3  # noqa: E731

    small = hessian_trace(np.full(4, 0.5), grad_fn, 2, fd_epsilon=0.1)
    large = hessian_trace(np.full(10_000, 0.5), grad_fn, 2, fd_epsilon=0.1)

    # 3*c^2 + (0.1*c)^2 per parameter at c = 0.5.
    assert small.value / 4 == pytest.approx(0.7525, rel=1e-9)
    assert large.value / 10_000 == pytest.approx(0.7525, rel=1e-9)


def test_hessian_trace__needs_a_probe():
    with pytest.raises(ValueError):
        hessian_trace(np.zeros(3), lambda t: t, 0)


def test_hessian_trace__non_finite():
    with pytest.raises(NonFiniteError):
        hessian_trace(np.zeros(3), lambda t: t / 0.0, 2)


def test_epsilon_stability__quadratic_is_stable():
    report = epsilon_stability(np.zeros(10), lambda t: DIAGONAL * t, 4)

    assert report.stable
    assert report.relative_gap == pytest.approx(0.0, abs=1e-6)
    assert [e.fd_epsilon for e in report.estimates] == [1e-3, 1e-4]


def test_epsilon_stability__flags_step_dependence():
    # At theta = 0 the estimate of a cubic gradient is proportional to step^2.
    with pytest.warns(UserWarning, match="Hessian trace changes"):
        report = epsilon_stability(np.zeros(4), lambda t: 1e6 * t**3, 2)

    assert not report.stable
    assert report.estimates[0].value == pytest.approx(1.0, rel=1e-6)
    assert report.relative_gap == pytest.approx(0.99, rel=1e-6)


def test_model_hessian_trace__restores_params(fp64, tiny_params, tiny_corpus):
    batches = eval_batches(tiny_corpus, 2, 2, 8, SamplerSeed(seed=1))
    before = tiny_params.flatten().copy()

    estimate = model_hessian_trace(tiny_params, batches, 3)

    assert np.isfinite(estimate.value)
    assert estimate.n_probes == 3
    np.testing.assert_array_equal(tiny_params.flatten(), before)


def test_model_hessian_trace__repeatable(fp64, tiny_params, tiny_corpus):
    batches = eval_batches(tiny_corpus, 1, 2, 8, SamplerSeed(seed=1))

    first = model_hessian_trace(tiny_params, batches, 2, seed=SamplerSeed(seed=4))
    second = model_hessian_trace(tiny_params, batches, 2, seed=SamplerSeed(seed=4))

    assert first.samples == second.samples


def test_model_hessian_trace__stable_across_epsilon(fp64, tiny_params, tiny_corpus):
    batches = eval_batches(tiny_corpus, 1, 2, 8, SamplerSeed(seed=1))
    seed = SamplerSeed(seed=5)

    coarse = model_hessian_trace(tiny_params, batches, 4, 1e-3, seed)
    fine = model_hessian_trace(tiny_params, batches, 4, 1e-4, seed)

    assert coarse.value == pytest.approx(fine.value, rel=0.1)


def test_transition_drop():
    log = _log([3.0] * 10 + [2.0] * 10 + [1.0] * 10, [1] * 10 + [2] * 10 + [3] * 10)

    reports = transition_drop(log, window=5)

    assert [r.step for r in reports] == [10, 20]
    assert [r.drop for r in reports] == [1.0, 1.0]
    assert reports[0].pre_mean == 3.0
    assert reports[0].post_mean == 2.0


def test_transition_drop__from_scheduler():
    log = _log(np.linspace(3.0, 1.0, 30))
    sched = SamplingScheduler.build([10, 30], [(0.5, 0.5, 0.5), (1, 1, 1)])

    reports = transition_drop(log, sched, window=4)

    assert [r.step for r in reports] == [10]
    assert reports[0].window == 4
    assert reports[0].drop == pytest.approx(4 * 2.0 / 29)


def test_transition_drop__loss_rise_is_negative():
    log = _log([1.0] * 6 + [2.0] * 6)

    (report,) = transition_drop(log, [6], window=3)

    assert report.drop == -1.0


def test_transition_drop__window_overlaps_neighbour():
    log = _log([1.0] * 30)

    with pytest.raises(InsufficientLogError) as ex:
        transition_drop(log, [10, 20], window=11)

    assert "overlaps" in str(ex.value)


def test_transition_drop__log_too_short():
    log = _log([1.0] * 12)

    with pytest.raises(InsufficientLogError):
        transition_drop(log, [10], window=5)


def test_transition_drop__invalid_window():
    with pytest.raises(ValueError):
        transition_drop(_log([1.0] * 4), [2], window=0)


def test_slope_compare__faster_decay_is_steeper():
    steps_a = np.arange(1, 3001)
    steps_b = np.arange(1, 6001)
    log_a = _log(np.exp(-0.002 * steps_a))
    log_b = _log(np.exp(-0.001 * steps_b))

    comparison = slope_compare(log_a, log_b, 0.5)

    assert comparison.loss_level == 0.5
    assert comparison.step_a < comparison.step_b
    assert comparison.slope_a < comparison.slope_b < 0
    assert comparison.slope_a / comparison.slope_b == pytest.approx(2.0, abs=0.1)


def test_slope_compare__level_never_reached():
    log_a = _log(np.exp(-0.002 * np.arange(1, 3001)))
    log_b = _log(np.full(3000, 0.9))

    with pytest.raises(InsufficientLogError) as ex:
        slope_compare(log_a, log_b, 0.5)

    assert "second log" in str(ex.value)
