"""Tests for dmtlab.dmt."""

import math

import numpy as np
import pytest

from dmtlab.diffusion import CountingDenoiser, SamplerSpec, diffuse
from dmtlab.dmt import (
    DmtConfig,
    dmt_train,
    dmt_train_asym,
    dmt_translate,
    dmt_translate_asym,
    held_out_loss,
    translation_start,
    translator_loss,
)
from dmtlab.errors import ContractError, TimestepRangeError, ValidationError
from dmtlab.models import Architecture, build_translator
from dmtlab.schedule import linear_schedule, marginal_coeffs


class ShiftTranslator:
    """Exact translator when the target is the source shifted by ``c``."""

    def __init__(self, c, t, sched):
        self.shift = marginal_coeffs(sched, t)[0] * np.asarray(c)

    def predict(self, x):
        return x + self.shift


class GaussianDenoiser:
    """Exact noise prediction for a scalar N(mean, sd²) target."""

    def __init__(self, mean, sd, sched):
        self.mean, self.var = mean, sd * sd
        self.sched = sched

    def predict(self, x, t):
        a, b = marginal_coeffs(self.sched, t)
        return b * (x - a * self.mean) / (a * a * self.var + b * b)


class ZeroDenoiser:
    def predict(self, x, t):
        return np.zeros_like(x)


def _affine():
    return build_translator(Architecture.for_data((2,), role="translator", kind="affine"))


# --- DmtConfig ---


class TestDmtConfig:
    def test_round_trip(self):
        cfg = DmtConfig(t=7, s=3, weighting="eq18", sampler=SamplerSpec.parse("ancestral"))
        assert DmtConfig.from_dict(cfg.to_dict()) == cfg

    def test_sampler_string_is_parsed(self):
        assert DmtConfig(t=2, sampler="ddim:4").sampler == SamplerSpec(kind="ddim", steps=4)

    def test_source_step(self):
        assert DmtConfig(t=5).source_step == 5
        assert DmtConfig(t=5, s=2).source_step == 2

    def test_invalid(self):
        with pytest.raises(ValidationError):
            DmtConfig(t=1, weighting="snr")
        with pytest.raises(ValidationError):
            DmtConfig(t=1, epochs=0)

    def test_validate_against_schedule(self, sched):
        with pytest.raises(TimestepRangeError):
            DmtConfig(t=sched.T + 1).validate(sched)
        with pytest.raises(ValidationError, match="t=0"):
            DmtConfig(t=0, weighting="eq18").validate(sched)

    def test_loss_weight(self, sched):
        assert DmtConfig(t=4).loss_weight(sched) == 1.0
        assert DmtConfig(t=4, weighting="eq18").loss_weight(sched) == pytest.approx(1 / (2 * (1 - sched.alpha_bars[4])))


# --- training ---


class TestTraining:
    def test_loss_of_identity(self):
        f = _affine()
        x, y = np.array([[0.5, 0.0]]), np.array([[0.0, 0.5]])
        assert translator_loss(f, x, y).item() == pytest.approx(0.5)
        assert translator_loss(f, x, y, weight=2.0).item() == pytest.approx(1.0)

    def test_symmetric_rejects_asymmetric_config(self, moons, sched):
        with pytest.raises(ContractError):
            dmt_train(moons, _affine(), DmtConfig(t=3, s=2), sched)

    def test_asymmetric_needs_source_step(self, moons, sched):
        with pytest.raises(ContractError):
            dmt_train_asym(moons, _affine(), DmtConfig(t=3), sched)

    def test_shape_mismatch(self, shapes, sched):
        with pytest.raises(ValidationError, match="does not fit"):
            dmt_train(shapes, _affine(), DmtConfig(t=1), sched)

    def test_affine_learns_rotation_at_t0(self, moons, sched):
        f, curve = dmt_train(moons.train(), _affine(), DmtConfig(t=0, epochs=300, batch_size=64, lr=0.05), sched)
        assert curve[-1][1] < 0.05 * curve[0][1]
        rot = np.array([[0.0, -1.0], [1.0, 0.0]])
        assert np.allclose(f.params["weight"].data, rot.T, atol=0.05)

    def test_training_improves_held_out_loss(self, moons, sched):
        f0 = _affine()
        before = held_out_loss(moons.test(), f0, 5, 5, sched)
        f, _ = dmt_train(moons.train(), _affine(), DmtConfig(t=5, epochs=100, lr=0.02), sched)
        assert held_out_loss(moons.test(), f, 5, 5, sched) < before

    def test_records_metadata(self, moons, sched):
        f, _ = dmt_train_asym(moons, _affine(), DmtConfig(t=6, s=2, epochs=1), sched)
        assert f.meta["extra"] == {"s": 2, "t": 6}
        assert f.meta["train_config"]["s"] == 2
        assert f.meta["schedule"] == sched.to_dict()

    def test_asymmetric_with_equal_steps_is_symmetric(self, moons, sched):
        a, curve_a = dmt_train(moons, _affine(), DmtConfig(t=5, epochs=4, seed=3), sched)
        b, curve_b = dmt_train_asym(moons, _affine(), DmtConfig(t=5, s=5, epochs=4, seed=3), sched)
        assert curve_a == curve_b
        for name in a.params:
            assert a.params[name].data.tobytes() == b.params[name].data.tobytes()

    def test_seeded(self, moons, sched):
        cfg = DmtConfig(t=4, epochs=3, seed=9)
        a, ca = dmt_train(moons, _affine(), cfg, sched)
        b, cb = dmt_train(moons, _affine(), cfg, sched)
        assert ca == cb
        assert np.array_equal(a.params["weight"].data, b.params["weight"].data)


# --- translation ---


class TestTranslation:
    def test_start_matches_fresh_target_diffusion(self, sched):
        rng = np.random.default_rng(0)
        x0 = rng.uniform(-1, 1, (5, 2))
        c = np.array([0.2, -0.1])
        z_src, z_fresh = rng.standard_normal((5, 2)), rng.standard_normal((5, 2))
        y_t = translation_start(x0, ShiftTranslator(c, 8, sched), 8, 8, z_src, z_fresh, sched)
        assert np.allclose(y_t, diffuse(x0 + c, 8, z_fresh, sched), atol=1e-12)

    @pytest.mark.parametrize("sampler", ["ancestral", "ddim:100"])
    def test_exact_translator_reproduces_target_moments(self, sampler):
        sched = linear_schedule(T=1000)
        t, shift = 300, 0.4
        x0 = np.random.default_rng(0).normal(0.5 - shift, 0.3, (20_000, 1))
        f = ShiftTranslator([shift], t, sched)
        out = dmt_translate(x0, f, GaussianDenoiser(0.5, 0.3, sched), DmtConfig(t=t, sampler=sampler), sched, seed=1)
        assert out.mean() == pytest.approx(0.5, abs=0.01)
        assert out.std() == pytest.approx(0.3, rel=0.05)

    def test_t_zero_skips_the_denoiser(self, sched):
        x0 = np.array([[0.1, 0.2], [0.3, -0.4]])
        counter = CountingDenoiser(ZeroDenoiser())
        out = dmt_translate(x0, ShiftTranslator([0.5, 0.5], 0, sched), counter, DmtConfig(t=0), sched, seed=1)
        assert np.allclose(out, x0 + 0.5)
        assert counter.calls == 0

    def test_seeded(self, sched):
        x0 = np.zeros((3, 2))
        cfg = DmtConfig(t=6, sampler="ancestral")
        f = ShiftTranslator([0.0, 0.0], 6, sched)
        a = dmt_translate(x0, f, ZeroDenoiser(), cfg, sched, seed=2)
        b = dmt_translate(x0, f, ZeroDenoiser(), cfg, sched, seed=2)
        c = dmt_translate(x0, f, ZeroDenoiser(), cfg, sched, seed=3)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_nfe_matches_sampler(self, sched):
        counter = CountingDenoiser(ZeroDenoiser())
        dmt_translate_asym(np.zeros((2, 2)), _affine(), counter, DmtConfig(t=10, s=4, sampler="ddim:3"), sched, 0)
        assert counter.calls == 3

    def test_symmetric_guard(self, sched):
        with pytest.raises(ContractError):
            dmt_translate(np.zeros((1, 2)), _affine(), ZeroDenoiser(), DmtConfig(t=5, s=2), sched, 0)

    def test_single_input(self, sched):
        out = dmt_translate(np.array([0.1, 0.2]), _affine(), ZeroDenoiser(), DmtConfig(t=3), sched, 0)
        assert out.shape == (2,)
        assert math.isfinite(float(out.sum()))
