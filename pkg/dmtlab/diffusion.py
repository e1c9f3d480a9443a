"""Forward diffusion, ancestral DDPM steps and deterministic DDIM steps.

All functions operate on float64 ndarrays (a ``Tensor`` is accepted and
unwrapped). None of them record gradients.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from dmtlab.errors import ContractError, DimensionError, ValidationError
from dmtlab.rng import make_rng
from dmtlab.schedule import NoiseSchedule, marginal_coeffs
from dmtlab.tensor import Tensor

logger = logging.getLogger(__name__)


class NoisePredictor(Protocol):
    def predict(self, x: np.ndarray, t: int) -> np.ndarray: ...


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _match(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} differ")


@dataclass(frozen=True)
class DiffusedPair:
    x_t: np.ndarray
    y_t: np.ndarray
    t: int
    shared_noise: np.ndarray


def diffuse(x0, t: int, z, s: NoiseSchedule) -> np.ndarray:
    """x_t = √ᾱ_t x0 + √(1 − ᾱ_t) z."""
    x0, z = _arr(x0), _arr(z)
    _match(x0, z, "diffuse")
    a, b = marginal_coeffs(s, t)
    return a * x0 + b * z


def diffuse_pair(x0, y0, t: int, z, s: NoiseSchedule) -> DiffusedPair:
    """Diffuse both domains to step ``t`` with the same noise ``z``."""
    x_t, y_t = diffuse_pair_asym(x0, y0, t, t, z, s)
    return DiffusedPair(x_t=x_t, y_t=y_t, t=t, shared_noise=_arr(z))


def diffuse_pair_asym(x0, y0, s_step: int, t_step: int, z, sched: NoiseSchedule) -> tuple[np.ndarray, np.ndarray]:
    """Diffuse ``x0`` to ``s_step`` and ``y0`` to ``t_step`` with the same noise."""
    x0, y0, z = _arr(x0), _arr(y0), _arr(z)
    _match(x0, y0, "diffuse_pair")
    return diffuse(x0, s_step, z, sched), diffuse(y0, t_step, z, sched)


def ddpm_step(y_i, i: int, eps_pred, noise, sched: NoiseSchedule) -> np.ndarray:
    """One ancestral step y_i -> y_{i-1}.

    ``noise`` may be None (treated as zero) and must be zero at i = 1.
    """
    if i < 1:
        raise ContractError(f"ddpm_step needs i >= 1, got {i}")
    sched.check_t(i, low=1)
    y_i, eps_pred = _arr(y_i), _arr(eps_pred)
    _match(y_i, eps_pred, "ddpm_step")
    beta = sched.betas[i]
    out = (y_i - (beta / math.sqrt(1.0 - sched.alpha_bars[i])) * eps_pred) / math.sqrt(sched.alphas[i])
    if noise is None:
        return out
    noise = _arr(noise)
    _match(y_i, noise, "ddpm_step")
    if i == 1:
        if np.any(noise != 0.0):
            raise ContractError("the final ancestral step (i=1) must not add noise")
        return out
    return out + sched.reverse_sigma(i) * noise


def ddim_step(y_t, t_from: int, t_to: int, eps_pred, sched: NoiseSchedule) -> np.ndarray:
    """Deterministic (η = 0) DDIM update from ``t_from`` to ``t_to``."""
    if not (0 <= t_to < t_from <= sched.T):
        raise ContractError(f"ddim_step needs 0 <= t_to < t_from <= T, got {t_to}, {t_from}")
    y_t, eps_pred = _arr(y_t), _arr(eps_pred)
    _match(y_t, eps_pred, "ddim_step")
    a_from, b_from = marginal_coeffs(sched, t_from)
    a_to, b_to = marginal_coeffs(sched, t_to)
    x0_hat = (y_t - b_from * eps_pred) / a_from
    return a_to * x0_hat + b_to * eps_pred


@dataclass(frozen=True)
class SamplerSpec:
    """``ancestral`` or ``ddim`` with a number of steps."""

    kind: str = "ddim"
    steps: int = 10

    def __post_init__(self):
        if self.kind not in ("ancestral", "ddim"):
            raise ValidationError(f"Unknown sampler {self.kind!r}")
        if self.kind == "ddim" and self.steps < 1:
            raise ValidationError(f"ddim needs at least one step, got {self.steps}")

    @classmethod
    def parse(cls, text: str) -> SamplerSpec:
        """Parse ``ancestral`` or ``ddim:<n>``."""
        name, _, steps = text.strip().partition(":")
        if name == "ancestral" and not steps:
            return cls(kind="ancestral", steps=0)
        if name == "ddim":
            try:
                return cls(kind="ddim", steps=int(steps or 10))
            except ValueError:
                pass
        raise ValidationError(f"Cannot parse sampler {text!r}; expected 'ancestral' or 'ddim:<n>'")

    def __str__(self) -> str:
        return "ancestral" if self.kind == "ancestral" else f"ddim:{self.steps}"


def ddim_timesteps(t_start: int, n_steps: int) -> list[int]:
    """Descending uniform integer strides from ``t_start`` to 0."""
    if t_start <= 0:
        return [0]
    grid = np.rint(np.linspace(t_start, 0, min(n_steps, t_start) + 1)).astype(int)
    return sorted(set(grid.tolist()), reverse=True)


def sampler_nfe(mode: SamplerSpec, t_start: int) -> int:
    """Number of denoiser evaluations ``sample_from`` makes."""
    if t_start <= 0:
        return 0
    if mode.kind == "ancestral":
        return t_start
    return len(ddim_timesteps(t_start, mode.steps)) - 1


class CountingDenoiser:
    """Wraps a noise predictor and counts calls to ``predict``."""

    def __init__(self, model: NoisePredictor):
        self.model = model
        self.calls = 0

    def predict(self, x: np.ndarray, t: int) -> np.ndarray:
        self.calls += 1
        return self.model.predict(x, t)


def sample_from(y_start, t_start: int, model: NoisePredictor, mode: SamplerSpec, sched: NoiseSchedule, seed: int) -> np.ndarray:
    """Run the reverse chain from ``t_start`` down to 0."""
    sched.check_t(t_start)
    y = _arr(y_start).copy()
    if t_start == 0:
        return y
    if mode.kind == "ancestral":
        rng = make_rng(seed)
        for i in range(t_start, 0, -1):
            eps = model.predict(y, i)
            noise = rng.standard_normal(y.shape) if i > 1 else None
            y = ddpm_step(y, i, eps, noise, sched)
        return y
    steps = ddim_timesteps(t_start, mode.steps)
    for t_from, t_to in zip(steps, steps[1:]):
        y = ddim_step(y, t_from, t_to, model.predict(y, t_from), sched)
    return y
