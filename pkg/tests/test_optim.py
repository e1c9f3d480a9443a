"""Tests for dmtlab.optim."""

import numpy as np
import pytest

from dmtlab.errors import ContractError, DimensionError, ValidationError
from dmtlab.optim import AdamState, adam_step
from dmtlab.tensor import Tensor, backward, square, sum_all


class TestAdam:
    def test_first_step_moves_by_lr(self):
        p = Tensor([1.0, -2.0], requires_grad=True)
        state = AdamState(lr=0.1)
        adam_step(state, {"p": p}, {"p": np.array([0.5, -4.0])})
        assert np.allclose(p.data, [0.9, -1.9], atol=1e-7)
        assert state.step == 1

    def test_clears_gradients(self):
        p = Tensor([1.0], requires_grad=True)
        backward(sum_all(square(p)))
        adam_step(AdamState(), {"p": p})
        assert p.grad is None

    def test_missing_gradient(self):
        p = Tensor([1.0], requires_grad=True)
        with pytest.raises(ContractError, match="no gradient for p"):
            adam_step(AdamState(), {"p": p})

    def test_gradient_shape(self):
        p = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(DimensionError):
            adam_step(AdamState(), {"p": p}, {"p": np.ones(3)})

    def test_invalid_hyperparameters(self):
        with pytest.raises(ValidationError):
            AdamState(lr=0.0)
        with pytest.raises(ValidationError):
            AdamState(beta1=1.0)

    def test_minimizes_quadratic(self):
        target = np.array([0.5, -1.5, 2.0])
        p = Tensor(np.zeros(3), requires_grad=True)
        state = AdamState(lr=0.05)
        for _ in range(2000):
            backward(sum_all(square(p - Tensor(target))))
            adam_step(state, {"p": p})
        assert np.allclose(p.data, target, atol=1e-2)

    def test_hyperparameters(self):
        assert AdamState(lr=1e-3).hyperparameters() == {"lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8}
