import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmfinterp import gradsuite
from nmfinterp.autodiff import (
    Adam,
    AdamState,
    ShapeError,
    Tensor,
    adam_step,
    backward,
    clip_grad_norm,
    grad_check,
    grad_check_report,
    ops,
    parameter,
    precision,
)


def test_relu_value_and_gradient_below_zero():
    x = parameter([-2.0])
    y = ops.relu(x)
    backward(ops.sum(y))
    assert y.data[0] == 0
    assert x.grad[0] == 0


def test_softmax_of_equal_logits():
    np.testing.assert_allclose(ops.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=1e-6)


def test_identity_kernel_conv():
    x = np.random.default_rng(0).standard_normal((1, 1, 3, 3))
    out = ops.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
    np.testing.assert_allclose(out.data, x.astype(np.float32))


def test_sum_of_squares_gradient():
    x = parameter([1.0, 2.0])
    backward(ops.sum(ops.square(x)))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_disconnected_leaf_gets_zero_grad():
    x, y = parameter([1.0, 2.0]), parameter([[3.0]])
    backward(ops.sum(x * x), [x, y])
    np.testing.assert_array_equal(y.grad, [[0.0]])


def test_backward_requires_scalar():
    x = parameter([1.0, 2.0])
    with pytest.raises(ShapeError):
        backward(x * 2.0)


def test_shape_errors_name_the_primitive():
    with pytest.raises(ShapeError, match="matmul.*\\(2, 3\\).*\\(2, 3\\)"):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError, match="conv2d"):
        ops.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))
    with pytest.raises(ShapeError, match="add"):
        ops.add(Tensor(np.ones(3)), Tensor(np.ones(4)))


def test_float32_storage_with_wide_reductions():
    x = Tensor(np.full(10**6, 0.1))
    assert x.data.dtype == np.float32
    assert ops.sum(x).item() == pytest.approx(10**6 * float(np.float32(0.1)), rel=1e-6)
    with precision(np.float64):
        assert Tensor([1.0]).data.dtype == np.float64
    assert Tensor([1.0]).data.dtype == np.float32


def test_frozen_tensor_receives_no_gradient():
    w = parameter(np.ones((2, 2)))
    frozen = Tensor(np.ones((2, 2)), requires_grad=False)
    backward(ops.sum(ops.matmul(w, frozen)))
    assert frozen.grad is None
    assert w.grad is not None


def test_interpolation_gradient_is_transpose():
    M = ops.interpolation_matrix(4, 9)
    x = parameter(np.zeros((1, 1, 1, 4)))
    g = np.random.default_rng(0).standard_normal(9)
    backward(ops.sum(ops.interpolate_time(x, 9) * Tensor(g.reshape(1, 1, 1, 9))))
    np.testing.assert_allclose(x.grad.reshape(-1), M @ g, rtol=1e-5)
    np.testing.assert_allclose(M.sum(axis=0), 1.0)


# -- finite differences ------------------------------------------------------


def test_composite_matches_coarse_central_differences():
    rng = np.random.default_rng(0)
    params = [rng.standard_normal((3, 4)), rng.standard_normal((2, 4)), rng.standard_normal(2)]

    def fn(p):
        return ops.sum(ops.sigmoid(ops.linear(ops.tanh(p[0]), p[1], p[2])) * Tensor([[1.0, -2.0]]))

    assert grad_check(fn, params, h=1e-3) < 1e-4


def test_linear_layer_alone():
    rng = np.random.default_rng(1)
    params = [rng.standard_normal((5, 3)), rng.standard_normal((4, 3)), rng.standard_normal(4)]
    w = rng.standard_normal((5, 4))
    assert grad_check(lambda p: ops.sum(ops.linear(p[0], p[1], p[2]) * Tensor(w)), params) < 1e-6


def test_constant_function_has_zero_error():
    assert grad_check(lambda p: ops.sum(Tensor(np.ones(3))) + 0.0 * ops.sum(p[0]), [np.ones(2)]) == 0.0


def test_kinks_are_skipped_not_compared():
    report = grad_check_report(lambda p: ops.sum(ops.relu(p[0])), [np.array([0.0, 1.0, -1.0])])
    assert report.skipped_nonsmooth == 1
    assert report.checked == 2
    assert report.max_rel_error < 1e-8


@pytest.mark.parametrize("seed", [0, 1])
def test_primitive_suite(seed):
    results = gradsuite.run_suite(seed)
    worst, ok = gradsuite.summarize(results)
    assert ok, {k: v.max_rel_error for k, v in results.items()}
    assert results["psi_on_classifier"].checked > 50


# -- optimizer ---------------------------------------------------------------


def test_adam_scalar_trace():
    with precision(np.float64):
        p = parameter([1.0])
    state = AdamState.zeros_like([p])
    expected = [0.900000002, 0.8654394181165108, 0.8387239867651465]
    for g, want in zip([0.5, -0.2, 0.0], expected):
        adam_step([p], [np.array([g])], state, lr=0.1)
        assert p.data[0] == pytest.approx(want, abs=1e-12)
    assert state.t == 3


def test_adam_zero_gradient_leaves_parameters():
    p = parameter([0.3, -0.7])
    before = p.data.copy()
    state = AdamState.zeros_like([p])
    for _ in range(2):
        adam_step([p], [np.zeros(2)], state)
        np.testing.assert_array_equal(p.data, before)


def test_adam_shape_mismatch():
    p = parameter(np.zeros(3))
    with pytest.raises(ShapeError):
        adam_step([p], [np.zeros(2)], AdamState.zeros_like([p]))
    with pytest.raises(ShapeError):
        adam_step([p], [], AdamState.zeros_like([p]))


def test_default_learning_rate():
    assert Adam([parameter([0.0])]).lr == 2e-4


def test_clip_grad_norm():
    a, b = parameter([0.0]), parameter([0.0, 0.0])
    a.grad, b.grad = np.array([3.0], np.float32), np.array([0.0, 4.0], np.float32)
    assert clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
    assert np.sqrt(a.grad[0] ** 2 + b.grad[1] ** 2) == pytest.approx(1.0, rel=1e-6)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_forward_and_backward_are_deterministic(seed):
    def run():
        rng = np.random.default_rng(seed)
        x = parameter(rng.standard_normal((1, 2, 6, 5)))
        w = parameter(rng.standard_normal((3, 2, 3, 3)))
        y = ops.mean_pool(ops.max_pool2d(ops.relu(ops.conv2d(x, w)), 2))
        loss = ops.sum(ops.softmax(y) * Tensor([[1.0, 2.0, 3.0]]))
        backward(loss)
        return loss.data.tobytes() + x.grad.tobytes() + w.grad.tobytes()

    assert run() == run()
