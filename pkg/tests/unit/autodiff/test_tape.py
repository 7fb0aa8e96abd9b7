import numpy as np
import pytest

from est_engine.autodiff import (
    ComputationTape,
    Tensor,
    active_tape,
    backward,
    get_dtype,
    get_precision,
    ops,
    set_precision,
)
from est_engine.exceptions import ConfigError, TapeConsumedError


def test_backward__square(fp64):
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)

    with ComputationTape() as tape:
        loss = ops.sum_all(ops.mul(x, x))
    tape.backward(loss)

    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_backward__reused_tensor_accumulates(fp64):
    x = Tensor(np.array([2.0]), requires_grad=True)

    with ComputationTape() as tape:
        y = ops.add(ops.scale(x, 3.0), ops.mul(x, x))
        loss = ops.sum_all(y)
    tape.backward(loss)

    # d/dx (3x + x^2) = 3 + 2x
    np.testing.assert_allclose(x.grad, [7.0])


def test_backward__through_loss_function(fp64):
    x = Tensor(np.array([[0.5, -1.0]]), requires_grad=True)

    with ComputationTape():
        loss = ops.sum_all(ops.gelu(x))
    backward(loss)

    assert x.grad is not None
    assert loss.tape.consumed


def test_backward__twice():
    x = Tensor(np.ones(2), requires_grad=True)

    with ComputationTape() as tape:
        loss = ops.sum_all(x)
    tape.backward(loss)

    with pytest.raises(TapeConsumedError):
        tape.backward(loss)


def test_record_on_consumed_tape():
    x = Tensor(np.ones(2), requires_grad=True)
    tape = ComputationTape()
    with tape:
        loss = ops.sum_all(x)
    tape.backward(loss)

    with pytest.raises(TapeConsumedError):
        with tape:
            pass


def test_backward__loss_from_other_tape():
    x = Tensor(np.ones(2), requires_grad=True)
    with ComputationTape():
        loss = ops.sum_all(x)

    with pytest.raises(TapeConsumedError):
        ComputationTape().backward(loss)


def test_backward__untaped_loss():
    loss = ops.sum_all(Tensor(np.ones(2)))

    with pytest.raises(TapeConsumedError):
        backward(loss)


def test_backward__non_scalar_loss():
    x = Tensor(np.ones(2), requires_grad=True)
    with ComputationTape() as tape:
        out = ops.scale(x, 2.0)

    with pytest.raises(TapeConsumedError):
        tape.backward(out)


def test_constants_get_no_gradient():
    x = Tensor(np.ones(3), requires_grad=True)
    c = Tensor(np.full(3, 2.0))

    with ComputationTape() as tape:
        loss = ops.sum_all(ops.mul(x, c))
    tape.backward(loss)

    assert c.grad is None
    np.testing.assert_allclose(x.grad, 2.0)


def test_active_tape__only_inside_context():
    assert active_tape() is None
    with ComputationTape() as tape:
        assert active_tape() is tape
    assert active_tape() is None


def test_operator_overloads(fp64):
    a = Tensor(np.array([[1.0, 2.0]]))
    b = Tensor(np.array([[3.0], [4.0]]))

    np.testing.assert_allclose((a @ b).data, [[11.0]])
    np.testing.assert_allclose((a + a).data, [[2.0, 4.0]])
    np.testing.assert_allclose((a * a).data, [[1.0, 4.0]])


def test_item__needs_single_element():
    with pytest.raises(ValueError):
        Tensor(np.ones(2)).item()


def test_set_precision():
    set_precision("fp64")

    assert get_precision() == "fp64"
    assert get_dtype() is np.float64
    assert Tensor([1.0]).data.dtype == np.float64


def test_default_precision_is_fp32():
    assert get_precision() == "fp32"
    assert Tensor([1.0]).data.dtype == np.float32


def test_set_precision__unknown():
    with pytest.raises(ConfigError) as ex:
        set_precision("fp16")

    assert "fp16" in str(ex.value)
