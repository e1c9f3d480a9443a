"""Tests for dmtlab.diffusion."""

import numpy as np
import pytest

from dmtlab.diffusion import (
    CountingDenoiser,
    SamplerSpec,
    ddim_step,
    ddim_timesteps,
    ddpm_step,
    diffuse,
    diffuse_pair,
    diffuse_pair_asym,
    sample_from,
    sampler_nfe,
)
from dmtlab.errors import ContractError, DimensionError, ValidationError
from dmtlab.schedule import linear_schedule, marginal_coeffs
from dmtlab.tensor import Tensor


class OracleDenoiser:
    """Exact noise prediction for a target distribution concentrated at ``point``."""

    def __init__(self, point, sched):
        self.point = np.asarray(point)
        self.sched = sched

    def predict(self, x, t):
        a, b = marginal_coeffs(self.sched, t)
        return (x - a * self.point) / b


class GaussianDenoiser:
    """Exact noise prediction for a scalar N(mean, sd²) target."""

    def __init__(self, mean, sd, sched):
        self.mean, self.var = mean, sd * sd
        self.sched = sched

    def predict(self, x, t):
        a, b = marginal_coeffs(self.sched, t)
        return b * (x - a * self.mean) / (a * a * self.var + b * b)


def _noise(shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


# --- forward process ---


class TestDiffuse:
    def test_t_zero_is_identity(self, sched):
        x0 = _noise((4, 2))
        assert np.array_equal(diffuse(x0, 0, _noise((4, 2), 1), sched), x0)

    def test_accepts_tensors(self, sched):
        x0, z = _noise((3, 2)), _noise((3, 2), 1)
        assert np.array_equal(diffuse(Tensor(x0), 5, Tensor(z), sched), diffuse(x0, 5, z, sched))

    def test_shape_mismatch(self, sched):
        with pytest.raises(DimensionError):
            diffuse(np.zeros((2, 2)), 3, np.zeros((2, 3)), sched)

    def test_shared_noise_cancels(self, sched):
        x0, y0, z = _noise((5, 2)), _noise((5, 2), 1), _noise((5, 2), 2)
        pair = diffuse_pair(x0, y0, 7, z, sched)
        a, _ = marginal_coeffs(sched, 7)
        assert np.allclose(pair.x_t - pair.y_t, a * (x0 - y0), atol=1e-14)
        assert pair.t == 7
        assert np.array_equal(pair.shared_noise, z)

    def test_asymmetric_steps(self, sched):
        x0, y0, z = _noise((5, 2)), _noise((5, 2), 1), _noise((5, 2), 2)
        x_s, y_t = diffuse_pair_asym(x0, y0, 3, 9, z, sched)
        assert np.array_equal(x_s, diffuse(x0, 3, z, sched))
        assert np.array_equal(y_t, diffuse(y0, 9, z, sched))


class TestForwardMarginals:
    def test_shared_noise_long_schedule(self):
        sched = linear_schedule(T=1000)
        rng = np.random.default_rng(0)
        x0, y0 = rng.uniform(-1, 1, (100, 2)), rng.uniform(-1, 1, (100, 2))
        z = rng.standard_normal((100, 2))
        for t in range(0, 1001, 50):
            pair = diffuse_pair(x0, y0, t, z, sched)
            a, _ = marginal_coeffs(sched, t)
            assert np.max(np.abs((pair.x_t - pair.y_t) - a * (x0 - y0))) < 1e-9

    @pytest.mark.parametrize("t", [10, 100, 500])
    def test_monte_carlo_moments(self, t):
        sched = linear_schedule(T=1000)
        n = 50_000
        x0 = np.full(n, 0.6)
        x_t = diffuse(x0, t, _noise(n, t), sched)
        a, b = marginal_coeffs(sched, t)
        assert abs(x_t.mean() - a * 0.6) <= 4 * b / np.sqrt(n)
        assert x_t.var(ddof=1) == pytest.approx(b * b, rel=0.02)

    def test_asymmetric_cross_covariance(self):
        sched = linear_schedule(T=1000)
        n = 50_000
        x_s, y_t = diffuse_pair_asym(np.full(n, 0.6), np.full(n, -0.2), 100, 500, _noise(n, 1), sched)
        _, b_s = marginal_coeffs(sched, 100)
        _, b_t = marginal_coeffs(sched, 500)
        assert np.cov(x_s, y_t)[0, 1] == pytest.approx(b_s * b_t, rel=0.02)


# --- reverse steps ---


class TestReverseSteps:
    def test_ddpm_step_inverts_first_step(self, sched):
        y0, eps = _noise((4, 2)), _noise((4, 2), 1)
        y1 = diffuse(y0, 1, eps, sched)
        assert np.allclose(ddpm_step(y1, 1, eps, None, sched), y0, atol=1e-12)

    def test_ddpm_step_rejects_noise_at_one(self, sched):
        y = _noise((2, 2))
        with pytest.raises(ContractError, match="must not add noise"):
            ddpm_step(y, 1, y, np.ones((2, 2)), sched)

    def test_ddpm_step_needs_positive_index(self, sched):
        with pytest.raises(ContractError):
            ddpm_step(np.zeros(2), 0, np.zeros(2), None, sched)

    def test_ddpm_step_adds_scaled_noise(self, sched):
        y, eps, noise = _noise(3), _noise(3, 1), _noise(3, 2)
        diff = ddpm_step(y, 5, eps, noise, sched) - ddpm_step(y, 5, eps, None, sched)
        assert np.allclose(diff, sched.reverse_sigma(5) * noise, atol=1e-14)

    def test_ddim_step_with_true_noise(self, sched):
        y0, eps = _noise((4, 2)), _noise((4, 2), 1)
        y_t = diffuse(y0, 12, eps, sched)
        assert np.allclose(ddim_step(y_t, 12, 4, eps, sched), diffuse(y0, 4, eps, sched), atol=1e-12)

    def test_ddim_step_order(self, sched):
        with pytest.raises(ContractError):
            ddim_step(np.zeros(2), 3, 5, np.zeros(2), sched)


# --- samplers ---


class TestSamplerSpec:
    @pytest.mark.parametrize(
        "text, kind, steps",
        [("ancestral", "ancestral", 0), ("ddim:25", "ddim", 25), ("ddim", "ddim", 10)],
    )
    def test_parse(self, text, kind, steps):
        spec = SamplerSpec.parse(text)
        assert (spec.kind, spec.steps) == (kind, steps)

    @pytest.mark.parametrize("text", ["ddim:x", "ddim:0", "euler", "ancestral:5", ""])
    def test_parse_rejects(self, text):
        with pytest.raises(ValidationError):
            SamplerSpec.parse(text)

    def test_str(self):
        assert str(SamplerSpec.parse("ddim:7")) == "ddim:7"
        assert str(SamplerSpec.parse("ancestral")) == "ancestral"


class TestSampling:
    def test_ddim_timesteps(self):
        assert ddim_timesteps(10, 5) == [10, 8, 6, 4, 2, 0]
        assert ddim_timesteps(3, 10) == [3, 2, 1, 0]
        assert ddim_timesteps(0, 10) == [0]

    def test_nfe(self):
        assert sampler_nfe(SamplerSpec.parse("ancestral"), 17) == 17
        assert sampler_nfe(SamplerSpec.parse("ddim:5"), 100) == 5
        assert sampler_nfe(SamplerSpec.parse("ddim:5"), 3) == 3
        assert sampler_nfe(SamplerSpec.parse("ddim:5"), 0) == 0

    @pytest.mark.parametrize("mode", ["ancestral", "ddim:4"])
    def test_counted_calls_match_nfe(self, sched, mode):
        spec = SamplerSpec.parse(mode)
        counter = CountingDenoiser(OracleDenoiser(np.zeros(2), sched))
        sample_from(_noise((3, 2)), 9, counter, spec, sched, seed=0)
        assert counter.calls == sampler_nfe(spec, 9)

    def test_t_zero_returns_input(self, sched):
        y = _noise((3, 2))
        counter = CountingDenoiser(OracleDenoiser(np.zeros(2), sched))
        out = sample_from(y, 0, counter, SamplerSpec(), sched, seed=0)
        assert np.array_equal(out, y)
        assert out is not y
        assert counter.calls == 0

    def test_ddim_with_oracle_reaches_point(self, sched):
        point = np.array([0.3, -0.7])
        out = sample_from(_noise((6, 2)), sched.T, OracleDenoiser(point, sched), SamplerSpec.parse("ddim:6"), sched, 0)
        assert np.allclose(out, point, atol=1e-10)

    def test_ancestral_and_full_ddim_agree_on_gaussian_target(self):
        sched = linear_schedule(T=1000)
        model = GaussianDenoiser(0.5, 0.3, sched)
        y_T = _noise(20_000, 5)
        ancestral = sample_from(y_T, sched.T, model, SamplerSpec.parse("ancestral"), sched, seed=0)
        ddim = sample_from(y_T, sched.T, model, SamplerSpec.parse("ddim:1000"), sched, seed=0)
        for out in (ancestral, ddim):
            assert out.mean() == pytest.approx(0.5, abs=0.01)
            assert out.std() == pytest.approx(0.3, rel=0.05)
        assert abs(ancestral.mean() - ddim.mean()) < 0.015
        assert ancestral.std() == pytest.approx(ddim.std(), rel=0.05)

    def test_ancestral_is_seeded(self, sched):
        model = OracleDenoiser(np.zeros(2), sched)
        spec = SamplerSpec.parse("ancestral")
        y = _noise((4, 2))
        a = sample_from(y, 10, model, spec, sched, seed=3)
        b = sample_from(y, 10, model, spec, sched, seed=3)
        assert np.array_equal(a, b)
