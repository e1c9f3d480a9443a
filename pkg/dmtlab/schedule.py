"""Variance schedules for the forward diffusion chain."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from dmtlab.errors import TimestepRangeError, ValidationError

SIGMA_MODES = ("posterior", "beta")


@dataclass(frozen=True)
class NoiseSchedule:
    """β, α and ᾱ tables for t = 0..T.

    Tables are indexed by timestep. Index 0 is "no diffusion": β_0 = 0,
    α_0 = 1 and ᾱ_0 = 1.
    """

    T: int
    beta_start: float
    beta_end: float
    kind: str = "linear"
    sigma_mode: str = "posterior"
    betas: np.ndarray = field(init=False, repr=False, compare=False)
    alphas: np.ndarray = field(init=False, repr=False, compare=False)
    alpha_bars: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind != "linear":
            raise ValidationError(f"Unsupported schedule kind {self.kind!r}")
        if self.sigma_mode not in SIGMA_MODES:
            raise ValidationError(f"sigma_mode must be one of {SIGMA_MODES}, got {self.sigma_mode!r}")
        if int(self.T) != self.T or self.T < 1:
            raise ValidationError(f"T must be a positive integer, got {self.T}")
        if not (0.0 < self.beta_start <= self.beta_end < 1.0):
            raise ValidationError(
                f"Need 0 < beta_start <= beta_end < 1, got {self.beta_start}, {self.beta_end}"
            )
        betas = np.empty(self.T + 1)
        betas[0] = 0.0
        betas[1:] = np.linspace(self.beta_start, self.beta_end, self.T)
        alphas = 1.0 - betas
        alpha_bars = np.empty(self.T + 1)
        alpha_bars[0] = 1.0
        for t in range(1, self.T + 1):
            alpha_bars[t] = alpha_bars[t - 1] * alphas[t]
        for table in (betas, alphas, alpha_bars):
            table.flags.writeable = False
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    def check_t(self, t: int, low: int = 0) -> int:
        if not (low <= t <= self.T):
            raise TimestepRangeError(f"timestep {t} outside [{low}, {self.T}]")
        return int(t)

    def marginal_coeffs(self, t: int) -> tuple[float, float]:
        return marginal_coeffs(self, t)

    def reverse_sigma(self, i: int) -> float:
        """σ_i used by the ancestral sampler, per ``sigma_mode``."""
        if self.sigma_mode == "beta":
            self.check_t(i, low=1)
            return math.sqrt(self.betas[i])
        return posterior_sigma(self, i)

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "kind": self.kind,
            "sigma_mode": self.sigma_mode,
        }

    @classmethod
    def from_dict(cls, data: dict) -> NoiseSchedule:
        try:
            return cls(
                T=int(data["T"]),
                beta_start=float(data["beta_start"]),
                beta_end=float(data["beta_end"]),
                kind=data.get("kind", "linear"),
                sigma_mode=data.get("sigma_mode", "posterior"),
            )
        except KeyError as e:
            raise ValidationError(f"Schedule is missing field {e.args[0]!r}") from None


def linear_schedule(
    T: int = 1000,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    sigma_mode: str = "posterior",
) -> NoiseSchedule:
    """Betas linearly spaced from ``beta_start`` to ``beta_end`` inclusive."""
    return NoiseSchedule(T=T, beta_start=beta_start, beta_end=beta_end, sigma_mode=sigma_mode)


def marginal_coeffs(s: NoiseSchedule, t: int) -> tuple[float, float]:
    """(√ᾱ_t, √(1 − ᾱ_t)) for q(x_t | x_0)."""
    t = s.check_t(t)
    ab = s.alpha_bars[t]
    return math.sqrt(ab), math.sqrt(1.0 - ab)


def posterior_sigma(s: NoiseSchedule, i: int) -> float:
    """Standard deviation of q(x_{i-1} | x_i, x_0); zero at i = 1."""
    i = s.check_t(i, low=1)
    return math.sqrt(s.betas[i] * (1.0 - s.alpha_bars[i - 1]) / (1.0 - s.alpha_bars[i]))
