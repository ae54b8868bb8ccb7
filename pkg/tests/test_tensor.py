import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rvos import tensor as T
from rvos.errors import ContractError, ShapeError
from rvos.gradcheck import gradcheck, relative_error
from rvos.tensor import Tensor, new_tape, no_grad
from rvos.verify import GRAD_TOL, _op_cases, gradcheck_suite


def leaf(x):
    return Tensor(np.asarray(x, dtype=float), requires_grad=True)


def test_add_mul_values():
    a, b = leaf([1.0, 2.0]), leaf([3.0, 4.0])
    np.testing.assert_array_equal((a * b + a).data, [4.0, 10.0])


def test_backward_simple_product():
    new_tape()
    a, b = leaf(2.0), leaf(3.0)
    (a * b + a).backward()
    assert a.grad == 4.0
    assert b.grad == 2.0


def test_broadcast_gradient_is_reduced():
    new_tape()
    a = leaf(np.ones((3, 4)))
    b = leaf(np.ones(4))
    (a * b).sum().backward()
    assert b.grad.shape == (4,)
    np.testing.assert_array_equal(b.grad, np.full(4, 3.0))


def test_reused_tensor_accumulates():
    new_tape()
    x = leaf(3.0)
    (x * x * x).backward()
    assert x.grad == pytest.approx(27.0)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


def test_backward_requires_scalar():
    new_tape()
    x = leaf(np.ones(3))
    with pytest.raises(ContractError):
        (x * 2).backward()


def test_backward_requires_taped_loss():
    with pytest.raises(ContractError):
        Tensor(1.0).backward()


def test_no_grad_records_nothing():
    tape = new_tape()
    x = leaf(np.ones(3))
    with no_grad():
        y = (x * 2).sum()
    assert len(tape) == 0
    assert not y.requires_grad


def test_ndarray_left_operand_stays_on_tape():
    new_tape()
    x = leaf(np.ones(3))
    y = np.arange(3.0) * x
    assert isinstance(y, Tensor)
    y.sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 2.0])


def test_sigmoid_is_stable_at_extremes():
    out = T.sigmoid(Tensor([-1000.0, 0.0, 1000.0])).data
    np.testing.assert_allclose(out, [0.0, 0.5, 1.0])
    assert np.all(np.isfinite(T.log_sigmoid(Tensor([-800.0, 800.0])).data))


def test_softmax_rows_sum_to_one():
    x = Tensor(np.random.default_rng(0).normal(size=(4, 6)) * 50)
    np.testing.assert_allclose(T.softmax(x, axis=-1).data.sum(-1), 1.0)


def test_conv2d_matches_direct_loop(rng):
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    out = T.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, 3, 3))
    for o in range(3):
        for i in range(3):
            for j in range(3):
                ref[0, o, i, j] = (xp[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]).sum()
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_upsample_preserves_constant():
    x = Tensor(np.full((1, 3, 3), 2.5))
    np.testing.assert_allclose(T.upsample2x(x).data, 2.5)


def test_layer_norm_statistics(rng):
    x = Tensor(rng.normal(size=(5, 16)) * 3 + 1)
    y = T.layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    np.testing.assert_allclose(y.mean(-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.std(-1), 1.0, atol=1e-4)


@pytest.mark.parametrize("name", sorted(_op_cases()))
def test_op_gradcheck(name):
    (res,) = gradcheck_suite({name: _op_cases()[name]}, "op", instances=20)
    assert res.value < GRAD_TOL, res.line()


def test_gradcheck_detects_wrong_rule():
    def bad_square(a):
        a = T._wrap(a)
        return T._result(a.data ** 2, (a,), lambda g: (g * a.data,))  # missing factor 2

    x = leaf([0.3, -1.2, 2.0])
    assert gradcheck(lambda: bad_square(x).sum(), [x]) > 0.1


def test_relative_error_zero_for_equal():
    assert relative_error(np.ones(3), np.ones(3)) == 0.0


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-5, 5)))
def test_sum_gradient_is_ones(x):
    new_tape()
    t = leaf(x)
    t.sum().backward()
    np.testing.assert_array_equal(t.grad, np.ones((3, 4)))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 5), elements=st.floats(-30, 30)))
def test_log_softmax_matches_log_of_softmax(x):
    a = T.log_softmax(Tensor(x), axis=-1).data
    b = np.log(T.softmax(Tensor(x), axis=-1).data)
    np.testing.assert_allclose(a, b, atol=1e-9)
