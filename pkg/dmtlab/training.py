"""DDPM training on the target domain with the simplified denoising objective."""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Callable
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from dmtlab.data import PairedDataset
from dmtlab.errors import ContractError, TrainingDivergenceError, ValidationError
from dmtlab.models import Architecture, DenoiserModel, build_denoiser
from dmtlab.optim import AdamState, adam_step
from dmtlab.rng import make_rng
from dmtlab.schedule import NoiseSchedule
from dmtlab.tensor import Tensor, backward, mean_all, mul, square, sub, sum_rows

logger = logging.getLogger(__name__)

WEIGHTINGS = ("none", "vlb")


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    seed: int = 0
    lr: float = 1e-3
    weighting: str = "none"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.weighting not in WEIGHTINGS:
            raise ValidationError(f"weighting must be one of {WEIGHTINGS}, got {self.weighting!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def vlb_weights(sched: NoiseSchedule, t: np.ndarray) -> np.ndarray:
    """β_t / (2 α_t (1 − ᾱ_t)) per timestep."""
    return sched.betas[t] / (2.0 * sched.alphas[t] * (1.0 - sched.alpha_bars[t]))


def ddpm_loss(
    model: Callable[[Tensor, np.ndarray], Tensor],
    y0_batch: np.ndarray,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    weighting: str = "none",
) -> Tensor:
    """Batch mean of ||ε − ε_θ(√ᾱ_t y0 + √(1 − ᾱ_t) ε, t)||² with t ~ U{1..T}."""
    y0 = np.asarray(y0_batch, dtype=np.float64)
    if y0.ndim == 0 or y0.shape[0] == 0:
        raise ContractError("ddpm_loss needs a non-empty batch")
    n = y0.shape[0]
    t = rng.integers(1, sched.T + 1, size=n)
    eps = rng.standard_normal(y0.shape)
    expand = (n,) + (1,) * (y0.ndim - 1)
    ab = sched.alpha_bars[t].reshape(expand)
    x_t = np.sqrt(ab) * y0 + np.sqrt(1.0 - ab) * eps
    per_sample = sum_rows(square(sub(model(Tensor(x_t), t), Tensor(eps))))
    if weighting == "vlb":
        per_sample = mul(per_sample, Tensor(vlb_weights(sched, t)))
    return mean_all(per_sample)


def train_ddpm(
    dataset: PairedDataset,
    cfg: TrainConfig,
    sched: NoiseSchedule,
    arch: Architecture | None = None,
    model: DenoiserModel | None = None,
) -> tuple[DenoiserModel, list[tuple[int, float]]]:
    """Train ε_θ on the target side of ``dataset``; returns the model and (epoch, loss) rows.

    Pass a dataset's training split; every pair in it is used.
    """
    y0 = dataset.y0
    if y0.shape[0] == 0:
        raise ContractError("train_ddpm needs a non-empty dataset")
    if model is None:
        arch = arch or Architecture.for_data(dataset.shape, role="denoiser")
        model = build_denoiser(arch, seed=cfg.seed)
    state = AdamState(lr=cfg.lr)
    rng = make_rng(cfg.seed, 1)
    curve: list[tuple[int, float]] = []
    n = y0.shape[0]
    logger.info(
        "training %s denoiser (%d parameters) on %d samples, T=%d, %d epochs",
        model.arch.kind, model.parameter_count, n, sched.T, cfg.epochs,
    )
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            batch = y0[order[start : start + cfg.batch_size]]
            loss = ddpm_loss(model, batch, sched, rng, cfg.weighting)
            value = loss.item()
            if not math.isfinite(value):
                logger.error("ddpm loss became %s in epoch %d", value, epoch)
                raise TrainingDivergenceError(epoch, value)
            backward(loss)
            adam_step(state, model.params)
            losses.append(value)
        curve.append((epoch, float(np.mean(losses))))
        logger.info("epoch %d loss %.6f", epoch, curve[-1][1])
    model.meta.update(
        schedule=sched.to_dict(),
        train_config=cfg.to_dict(),
        optimizer=state.hyperparameters(),
    )
    return model, curve


def write_curve_csv(path, rows: list[tuple[int, float]]) -> None:
    """Write (epoch, loss) rows with header ``epoch,loss``."""
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["epoch", "loss"])
        for epoch, loss in rows:
            writer.writerow([epoch, repr(float(loss))])
