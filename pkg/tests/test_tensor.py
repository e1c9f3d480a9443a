"""Tests for dmtlab.tensor."""

import numpy as np
import pytest

from dmtlab.errors import ContractError, DimensionError
from dmtlab.tensor import (
    Tape,
    Tensor,
    add,
    add_bias,
    add_channel_bias,
    avg_pool2,
    backward,
    check_gradients,
    conv2d,
    elementwise,
    matmul,
    mean_all,
    mul,
    relu,
    reshape,
    square,
    sum_all,
    sum_rows,
    tanh,
    upsample2,
)


def _param(shape, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape), requires_grad=True)


# --- elementwise ---


class TestElementwise:
    def test_add_sub_mul_values(self):
        a, b = Tensor([1.0, 2.0]), Tensor([3.0, 5.0])
        assert np.array_equal((a + b).data, [4.0, 7.0])
        assert np.array_equal((a - b).data, [-2.0, -3.0])
        assert np.array_equal((a * b).data, [3.0, 10.0])

    def test_scalar_operators(self):
        a = Tensor([1.0, -2.0])
        assert np.array_equal((2.0 * a).data, [2.0, -4.0])
        assert np.array_equal((a + 1.0).data, [2.0, -1.0])
        assert np.array_equal((-a).data, [-1.0, 2.0])

    def test_shape_mismatch_raises(self):
        with pytest.raises(DimensionError, match="add"):
            add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))
        with pytest.raises(DimensionError):
            mul(Tensor(np.ones((2, 2))), Tensor(np.ones(4)))

    def test_relu_and_tanh(self):
        x = Tensor([-1.0, 0.0, 2.0])
        assert np.array_equal(relu(x).data, [0.0, 0.0, 2.0])
        assert np.allclose(tanh(x).data, np.tanh([-1.0, 0.0, 2.0]))

    def test_named_dispatch(self):
        assert np.array_equal(elementwise("square", Tensor([3.0])).data, [9.0])

    def test_unknown_op(self):
        with pytest.raises(ContractError, match="Unknown elementwise"):
            elementwise("cube", Tensor([1.0]))

    def test_no_tape_without_grad(self):
        out = square(Tensor([1.0]))
        assert out.requires_grad is False
        assert out.is_leaf


# --- reductions and shape ---


class TestReductions:
    def test_sum_rows(self):
        x = Tensor(np.arange(12.0).reshape(2, 2, 3))
        assert np.array_equal(sum_rows(x).data, [15.0, 51.0])

    def test_mean_and_sum(self):
        x = Tensor(np.arange(4.0))
        assert sum_all(x).item() == 6.0
        assert mean_all(x).item() == 1.5

    def test_item_needs_scalar(self):
        with pytest.raises(ContractError, match="single element"):
            Tensor([1.0, 2.0]).item()

    def test_reshape_mismatch(self):
        with pytest.raises(DimensionError, match="reshape"):
            reshape(Tensor(np.ones(6)), (4, 2))


# --- linear algebra ---


class TestLinear:
    def test_matmul_shapes(self):
        with pytest.raises(DimensionError, match="matmul"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_add_bias_shape(self):
        with pytest.raises(DimensionError):
            add_bias(Tensor(np.ones((2, 3))), Tensor(np.ones(2)))

    def test_channel_bias_per_sample(self):
        x = Tensor(np.zeros((2, 3, 2, 2)))
        b = Tensor(np.arange(6.0).reshape(2, 3))
        out = add_channel_bias(x, b)
        assert out.data[1, 2, 0, 0] == 5.0
        with pytest.raises(DimensionError):
            add_channel_bias(x, Tensor(np.ones(4)))


# --- convolution ---


class TestConv:
    def test_ones_kernel_counts_neighbours(self):
        out = conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
        assert out.shape == (1, 3, 3)
        assert out.data[0, 1, 1] == 9.0
        assert out.data[0, 0, 0] == 4.0
        assert out.data[0, 0, 1] == 6.0

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError, match="input channels"):
            conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))

    def test_pool_and_upsample(self):
        x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
        pooled = avg_pool2(x)
        assert pooled.shape == (1, 1, 2, 2)
        assert pooled.data[0, 0, 0, 0] == 2.5
        assert upsample2(pooled).shape == (1, 1, 4, 4)

    def test_pool_needs_even_dims(self):
        with pytest.raises(DimensionError):
            avg_pool2(Tensor(np.ones((1, 1, 3, 4))))


# --- backward ---


class TestBackward:
    def test_reused_node_accumulates(self):
        x = Tensor([1.0, -3.0], requires_grad=True)
        backward(sum_all(mul(x, x)))
        assert np.array_equal(x.grad, [2.0, -6.0])

    def test_grads_accumulate_across_calls(self):
        x = Tensor([2.0], requires_grad=True)
        backward(sum_all(x * 3.0))
        backward(sum_all(x * 3.0))
        assert x.grad[0] == 6.0

    def test_non_scalar_loss(self):
        with pytest.raises(ContractError, match="scalar"):
            backward(Tensor([1.0, 2.0], requires_grad=True))

    def test_loss_off_tape(self):
        with pytest.raises(ContractError, match="not on the tape"):
            backward(Tensor(1.0))

    def test_tape_orders_parents_first(self):
        x = Tensor([1.0], requires_grad=True)
        y = square(x)
        z = sum_all(y)
        tape = Tape.record(z)
        assert tape.nodes.index(x) < tape.nodes.index(y) < tape.nodes.index(z)
        assert len(tape) == 3

    def test_mlp_gradients(self):
        x = Tensor(np.random.default_rng(1).standard_normal((5, 3)))
        w, b = _param((3, 4)), _param((4,), seed=2)
        err = check_gradients(lambda: mean_all(square(tanh(add_bias(matmul(x, w), b)))), [w, b])
        assert err < 1e-6

    def test_conv_gradients(self):
        x = _param((2, 2, 4, 4), seed=3)
        k = _param((3, 2, 3, 3), seed=4)
        b = _param((3,), seed=5)
        fn = lambda: mean_all(square(upsample2(avg_pool2(tanh(add_channel_bias(conv2d(x, k), b))))))  # noqa: E731
        assert check_gradients(fn, [x, k, b]) < 1e-5

    def test_max_coords_subsamples(self):
        w = _param((10, 10))
        err = check_gradients(lambda: sum_all(square(w)), [w], max_coords=5)
        assert err < 1e-8
