"""Tape mechanics and the primitive vector-Jacobian products."""

import numpy as np
import pytest

from stscnet.autodiff import (
    Parameter,
    Tape,
    Value,
    add,
    add_bias,
    add_scalar,
    matmul,
    mean_time,
    mul,
    mul_const,
    relu,
    reshape,
    scale,
    sigmoid,
    stop_gradient,
    sub,
    sub_const,
    sum_all,
)
from stscnet.errors import InvalidArgument, StateError


def test_matmul_hand_values():
    a = Value(np.array([[1.0, 2.0], [3.0, 4.0]]))
    b = Value(np.array([[5.0], [6.0]]))
    out = matmul(a, b)
    assert np.array_equal(out.data, np.array([[17.0], [39.0]]))


def test_matmul_identity():
    a = Value(np.arange(6.0).reshape(2, 3))
    eye = Value(np.eye(3))
    assert np.array_equal(matmul(a, eye).data, a.data)


def test_matmul_rejects_bad_shapes():
    with pytest.raises(InvalidArgument):
        matmul(Value(np.ones((2, 3))), Value(np.ones((2, 3))))
    with pytest.raises(InvalidArgument):
        matmul(Value(np.ones(3)), Value(np.ones((3, 2))))


def test_elementwise_ops_require_equal_shapes():
    a = Value(np.ones((2, 3)))
    b = Value(np.ones((3, 2)))
    for op in (add, sub, mul):
        with pytest.raises(InvalidArgument):
            op(a, b)
    with pytest.raises(InvalidArgument):
        mul_const(a, np.ones((3, 2)))


def test_no_tape_is_inference_mode():
    # primitives run eagerly and record nothing when no tape is active
    a = Value(np.array([1.0, -2.0]), requires_grad=True)
    out = relu(mul(a, a))
    assert np.array_equal(out.data, np.array([1.0, 4.0]))
    with Tape() as tape:
        pass
    with pytest.raises(StateError):
        tape.backward(out)


def test_tape_records_only_inside_context():
    a = Value(np.ones(3), requires_grad=True)
    with Tape() as tape:
        mul(a, a)
    assert len(tape) == 1
    mul(a, a)
    assert len(tape) == 1


def test_backward_square_gradient():
    x = Parameter(np.array([1.0, -2.0, 3.0]))
    with Tape() as tape:
        y = sum_all(mul(x, x))
    tape.backward(y)
    assert np.allclose(x.grad, 2 * x.data)


def test_fanout_accumulates_adjoints():
    # y = x*x + x uses x twice: dy/dx = 2x + 1
    x = Parameter(np.array([0.5, -1.5]))
    with Tape() as tape:
        y = sum_all(add(mul(x, x), x))
    tape.backward(y)
    assert np.allclose(x.grad, 2 * x.data + 1)


def test_second_backward_doubles_leaf_grads():
    x = Parameter(np.array([2.0, 3.0]))
    with Tape() as tape:
        y = sum_all(mul(x, x))
    tape.backward(y)
    once = x.grad.copy()
    tape.backward(y)
    assert np.array_equal(x.grad, 2 * once)


def test_zero_grad_resets_accumulation():
    x = Parameter(np.array([2.0]))
    with Tape() as tape:
        y = sum_all(mul(x, x))
    tape.backward(y)
    x.zero_grad()
    assert np.array_equal(x.grad, np.zeros(1))
    tape.backward(y)
    assert np.allclose(x.grad, 2 * x.data)


def test_intermediate_values_keep_no_grad():
    x = Parameter(np.array([1.0, 2.0]))
    with Tape() as tape:
        h = mul(x, x)
        y = sum_all(h)
    tape.backward(y)
    assert h.grad is None
    assert y.grad is None


def test_plain_values_get_no_grad():
    x = Value(np.array([1.0, 2.0]))
    with Tape() as tape:
        y = sum_all(mul(x, x))
    tape.backward(y)
    assert x.grad is None


def test_stop_gradient_blocks_one_path():
    a = Parameter(np.array([2.0, 3.0]))
    b = Parameter(np.array([5.0, 7.0]))
    with Tape() as tape:
        y = sum_all(mul(a, stop_gradient(b)))
    tape.backward(y)
    assert np.array_equal(a.grad, b.data)
    assert np.array_equal(b.grad, np.zeros(2))


def test_backward_seed_weights_the_root():
    x = Parameter(np.array([1.0, 2.0, 3.0]))
    with Tape() as tape:
        y = mul(x, x)
    seed = np.array([1.0, 0.0, 2.0])
    tape.backward(y, seed=seed)
    assert np.allclose(x.grad, seed * 2 * x.data)


def test_empty_tape_backward_is_a_state_error():
    with Tape() as tape:
        pass
    with pytest.raises(StateError):
        tape.backward(Value(np.zeros(1)))


def test_scalar_and_const_ops_forward():
    a = Value(np.array([1.0, -2.0]))
    assert np.array_equal(scale(a, 3.0).data, np.array([3.0, -6.0]))
    assert np.array_equal(add_scalar(a, 1.5).data, np.array([2.5, -0.5]))
    assert np.array_equal(sub_const(a, np.array([1.0, 1.0])).data, np.array([0.0, -3.0]))
    assert np.array_equal(mul_const(a, np.array([2.0, 0.5])).data, np.array([2.0, -1.0]))


def test_sigmoid_saturates_without_overflow():
    x = Value(np.array([-1000.0, 0.0, 1000.0]))
    with np.errstate(over="raise"):
        y = sigmoid(x)
    assert y.data[0] == 0.0
    assert y.data[1] == 0.5
    assert y.data[2] == 1.0


def test_relu_gradient_mask():
    x = Parameter(np.array([-1.0, 0.0, 2.0]))
    with Tape() as tape:
        y = sum_all(relu(x))
    tape.backward(y)
    # exactly zero is not in the active set
    assert np.array_equal(x.grad, np.array([0.0, 0.0, 1.0]))


def test_mean_time_forward_and_grad():
    x = Parameter(np.arange(12.0).reshape(3, 4))
    with Tape() as tape:
        y = sum_all(mean_time(x))
    tape.backward(y)
    assert np.allclose(mean_time(x).data, x.data.mean(axis=0))
    assert np.allclose(x.grad, np.full((3, 4), 1.0 / 3.0))


def test_reshape_round_trips_gradient():
    x = Parameter(np.arange(6.0).reshape(2, 3))
    c = np.arange(6.0).reshape(3, 2)
    with Tape() as tape:
        y = sum_all(mul_const(reshape(x, (3, 2)), c))
    tape.backward(y)
    assert np.array_equal(x.grad, c.reshape(2, 3))


def test_add_bias_sums_over_leading_axes():
    x = Parameter(np.zeros((4, 3)))
    b = Parameter(np.array([1.0, 2.0, 3.0]))
    with Tape() as tape:
        y = sum_all(add_bias(x, b))
    tape.backward(y)
    assert np.array_equal(b.grad, np.full(3, 4.0))
    assert np.array_equal(x.grad, np.ones((4, 3)))
    with pytest.raises(InvalidArgument):
        add_bias(x, Parameter(np.ones(4)))


def test_sum_all_grad_is_ones():
    x = Parameter(np.ones((2, 2)))
    with Tape() as tape:
        y = sum_all(x)
    tape.backward(y)
    assert y.data.shape == ()
    assert np.array_equal(x.grad, np.ones((2, 2)))
