"""Translator training at a preset timestep and translation inference.

Training pairs are diffused with one shared noise draw: x_s from the
source, y_t from the target. The translator learns x_s -> y_t. At inference
the source noise is swapped for fresh noise and the frozen denoiser finishes
the reverse chain from t.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from dmtlab.data import PairedDataset, ensure_not_degenerate
from dmtlab.diffusion import NoisePredictor, SamplerSpec, diffuse, diffuse_pair_asym, sample_from
from dmtlab.errors import ContractError, TrainingDivergenceError, ValidationError
from dmtlab.models import TranslatorModel
from dmtlab.optim import AdamState, adam_step
from dmtlab.rng import derive_seed, make_rng
from dmtlab.schedule import NoiseSchedule, marginal_coeffs
from dmtlab.tensor import Tensor, backward, mean_all, scale, square, sub, sum_rows

logger = logging.getLogger(__name__)

WEIGHTINGS = ("plain", "eq18")


class Translator(Protocol):
    def predict(self, x: np.ndarray) -> np.ndarray: ...


@dataclass
class DmtConfig:
    """Translator training and inference settings.

    ``s`` is None for the symmetric pipeline. ``t = 0`` skips diffusion and
    the sampler (the translator maps clean source to clean target).
    """

    t: int
    s: int | None = None
    weighting: str = "plain"
    epochs: int = 60
    batch_size: int = 32
    seed: int = 0
    lr: float = 2e-4
    sampler: SamplerSpec = field(default_factory=SamplerSpec)

    def __post_init__(self):
        if self.weighting not in WEIGHTINGS:
            raise ValidationError(f"weighting must be one of {WEIGHTINGS}, got {self.weighting!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be at least 1")
        if isinstance(self.sampler, str):
            self.sampler = SamplerSpec.parse(self.sampler)

    @property
    def source_step(self) -> int:
        return self.t if self.s is None else self.s

    def validate(self, sched: NoiseSchedule) -> None:
        sched.check_t(self.t)
        sched.check_t(self.source_step)
        if self.weighting == "eq18" and self.t == 0:
            raise ValidationError("eq18 weighting is undefined at t=0")

    def loss_weight(self, sched: NoiseSchedule) -> float:
        if self.weighting == "plain":
            return 1.0
        return 1.0 / (2.0 * (1.0 - sched.alpha_bars[self.t]))

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "s": self.s,
            "weighting": self.weighting,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "lr": self.lr,
            "sampler": str(self.sampler),
        }

    @classmethod
    def from_dict(cls, data: dict) -> DmtConfig:
        return cls(**{**data, "sampler": SamplerSpec.parse(data.get("sampler", "ddim:10"))})


def translator_loss(f, x_s: np.ndarray, y_t: np.ndarray, weight: float = 1.0) -> Tensor:
    """Batch mean of ||f(x_s) − y_t||², times ``weight``."""
    loss = mean_all(sum_rows(square(sub(f(Tensor(x_s)), Tensor(y_t)))))
    return loss if weight == 1.0 else scale(loss, weight)


def _train(pairs: PairedDataset, f: TranslatorModel, cfg: DmtConfig, sched: NoiseSchedule, s: int, t: int):
    ensure_not_degenerate(pairs.x0, pairs.y0)
    cfg.validate(sched)
    if pairs.shape != f.arch.input_shape:
        raise ValidationError(f"Dataset shape {pairs.shape} does not fit translator input {f.arch.input_shape}")
    rng = make_rng(cfg.seed, 2)
    state = AdamState(lr=cfg.lr)
    weight = cfg.loss_weight(sched)
    n = pairs.n
    curve: list[tuple[int, float]] = []
    logger.info("training %s translator at (s=%d, t=%d) on %d pairs for %d epochs", f.arch.kind, s, t, n, cfg.epochs)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            z = rng.standard_normal(pairs.x0[idx].shape)
            x_s, y_t = diffuse_pair_asym(pairs.x0[idx], pairs.y0[idx], s, t, z, sched)
            loss = translator_loss(f, x_s, y_t, weight)
            value = loss.item()
            if not math.isfinite(value):
                logger.error("translator loss became %s in epoch %d", value, epoch)
                raise TrainingDivergenceError(epoch, value)
            backward(loss)
            adam_step(state, f.params)
            losses.append(value)
        curve.append((epoch, float(np.mean(losses))))
        logger.info("epoch %d loss %.6f", epoch, curve[-1][1])
    f.meta.update(
        schedule=sched.to_dict(),
        train_config=cfg.to_dict(),
        optimizer=state.hyperparameters(),
        extra={"s": s, "t": t},
    )
    return f, curve


def dmt_train(pairs: PairedDataset, f: TranslatorModel, cfg: DmtConfig, sched: NoiseSchedule):
    """Train ``f`` to map x_t to y_t (shared noise). Returns (f, curve rows)."""
    if cfg.s is not None and cfg.s != cfg.t:
        raise ContractError(f"dmt_train is symmetric; got s={cfg.s}, t={cfg.t}")
    return _train(pairs, f, cfg, sched, cfg.t, cfg.t)


def dmt_train_asym(pairs: PairedDataset, f: TranslatorModel, cfg: DmtConfig, sched: NoiseSchedule):
    """Train ``f`` to map x_s to y_t (shared noise). Returns (f, curve rows)."""
    if cfg.s is None:
        raise ContractError("dmt_train_asym needs a source step s")
    return _train(pairs, f, cfg, sched, cfg.s, cfg.t)


def translation_start(x0, f: Translator, s: int, t: int, z_src: np.ndarray, z_fresh: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """y_t = f(x_s) − √(1 − ᾱ_t) z_src + √(1 − ᾱ_t) z_fresh with x_s diffused by ``z_src``."""
    x_s = diffuse(x0, s, z_src, sched)
    _, b_t = marginal_coeffs(sched, t)
    return f.predict(x_s) - b_t * z_src + b_t * z_fresh


def dmt_translate_asym(x0, f: Translator, eps: NoisePredictor, cfg: DmtConfig, sched: NoiseSchedule, seed: int) -> np.ndarray:
    """Translate source samples (one or a batch); fresh noise is drawn per input."""
    cfg.validate(sched)
    x0 = np.asarray(x0, dtype=np.float64)
    rng = make_rng(seed)
    z_src = rng.standard_normal(x0.shape)
    z_fresh = rng.standard_normal(x0.shape)
    y_t = translation_start(x0, f, cfg.source_step, cfg.t, z_src, z_fresh, sched)
    return sample_from(y_t, cfg.t, eps, cfg.sampler, sched, seed=derive_seed(seed, 1))


def dmt_translate(x0, f: Translator, eps: NoisePredictor, cfg: DmtConfig, sched: NoiseSchedule, seed: int) -> np.ndarray:
    if cfg.s is not None and cfg.s != cfg.t:
        raise ContractError(f"dmt_translate is symmetric; got s={cfg.s}, t={cfg.t}")
    return dmt_translate_asym(x0, f, eps, cfg, sched, seed)


def held_out_loss(pairs: PairedDataset, f: TranslatorModel, s: int, t: int, sched: NoiseSchedule, seed: int = 0) -> float:
    """Plain translator loss on ``pairs`` with one shared-noise draw per pair."""
    z = make_rng(seed).standard_normal(pairs.x0.shape)
    x_s, y_t = diffuse_pair_asym(pairs.x0, pairs.y0, s, t, z, sched)
    return translator_loss(f, x_s, y_t).item()
