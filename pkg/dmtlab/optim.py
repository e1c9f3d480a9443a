"""Adam with bias correction over named parameter tensors."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from dmtlab.errors import ContractError, DimensionError, ValidationError
from dmtlab.tensor import Tensor


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    v: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValidationError(f"learning rate must be positive, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValidationError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")

    def hyperparameters(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


def adam_step(state: AdamState, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray] | None = None) -> None:
    """Update ``params`` in place and clear their gradients.

    Gradients come from ``grads`` when given, else from each tensor's ``grad``.
    """
    if grads is None:
        missing = [name for name, p in params.items() if p.grad is None]
        if missing:
            raise ContractError(f"adam_step: no gradient for {', '.join(missing)}")
        grads = {name: p.grad for name, p in params.items()}
    for name, p in params.items():
        if name not in grads or grads[name] is None:
            raise ContractError(f"adam_step: no gradient for {name}")
        if grads[name].shape != p.shape:
            raise DimensionError(f"adam_step: gradient for {name} has shape {grads[name].shape}, expected {p.shape}")

    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
        p.grad = None
