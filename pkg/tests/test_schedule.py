"""Tests for dmtlab.schedule."""

import math

import numpy as np
import pytest

from dmtlab.errors import TimestepRangeError, ValidationError
from dmtlab.schedule import NoiseSchedule, linear_schedule, marginal_coeffs, posterior_sigma


class TestNoiseSchedule:
    def test_tables_are_padded_at_zero(self):
        s = linear_schedule(T=10, beta_start=0.01, beta_end=0.1)
        assert s.betas.shape == (11,)
        assert s.betas[0] == 0.0
        assert s.alphas[0] == 1.0
        assert s.alpha_bars[0] == 1.0
        assert s.betas[1] == pytest.approx(0.01)
        assert s.betas[10] == pytest.approx(0.1)

    def test_alpha_bars_decrease(self):
        s = linear_schedule(T=50)
        assert np.all(np.diff(s.alpha_bars) < 0)
        assert s.alpha_bars[3] == pytest.approx(np.prod(1.0 - s.betas[1:4]), rel=1e-14)

    def test_tables_are_read_only(self):
        s = linear_schedule(T=5)
        with pytest.raises(ValueError):
            s.betas[1] = 0.5

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"T": 0, "beta_start": 0.1, "beta_end": 0.2},
            {"T": 5, "beta_start": 0.0, "beta_end": 0.2},
            {"T": 5, "beta_start": 0.3, "beta_end": 0.2},
            {"T": 5, "beta_start": 0.1, "beta_end": 1.0},
            {"T": 5, "beta_start": 0.1, "beta_end": 0.2, "kind": "cosine"},
            {"T": 5, "beta_start": 0.1, "beta_end": 0.2, "sigma_mode": "learned"},
        ],
    )
    def test_invalid_settings(self, kwargs):
        with pytest.raises(ValidationError):
            NoiseSchedule(**kwargs)

    def test_check_t_bounds(self):
        s = linear_schedule(T=5)
        assert s.check_t(0) == 0
        assert s.check_t(5) == 5
        with pytest.raises(TimestepRangeError):
            s.check_t(6)
        with pytest.raises(TimestepRangeError):
            s.check_t(0, low=1)

    def test_dict_round_trip(self):
        s = linear_schedule(T=7, beta_start=0.02, beta_end=0.3, sigma_mode="beta")
        assert NoiseSchedule.from_dict(s.to_dict()) == s

    def test_from_dict_missing_field(self):
        with pytest.raises(ValidationError, match="beta_end"):
            NoiseSchedule.from_dict({"T": 5, "beta_start": 0.1})


class TestCoefficients:
    def test_marginal_coeffs_unit_norm(self):
        s = linear_schedule(T=30)
        for t in (0, 1, 15, 30):
            a, b = marginal_coeffs(s, t)
            assert a * a + b * b == pytest.approx(1.0, abs=1e-15)
        assert marginal_coeffs(s, 0) == (1.0, 0.0)

    def test_marginal_coeffs_range(self):
        with pytest.raises(TimestepRangeError):
            marginal_coeffs(linear_schedule(T=3), 4)

    def test_posterior_sigma_vanishes_at_one(self):
        s = linear_schedule(T=10)
        assert posterior_sigma(s, 1) == 0.0
        expected = math.sqrt(s.betas[4] * (1 - s.alpha_bars[3]) / (1 - s.alpha_bars[4]))
        assert posterior_sigma(s, 4) == pytest.approx(expected, rel=1e-14)

    def test_reverse_sigma_modes(self):
        post = linear_schedule(T=10)
        beta = linear_schedule(T=10, sigma_mode="beta")
        assert post.reverse_sigma(4) == posterior_sigma(post, 4)
        assert beta.reverse_sigma(4) == pytest.approx(math.sqrt(beta.betas[4]))
        with pytest.raises(TimestepRangeError):
            beta.reverse_sigma(0)
