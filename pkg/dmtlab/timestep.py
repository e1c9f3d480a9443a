"""Timestep pre-selection from distance curves, and (s, t) grid search.

For a chosen metric the source curve d(x0, x_t) grows with t while the
cross curve d(x_t, y_t) shrinks (shared noise pulls the domains together).
The translation timestep t* is taken at their first crossing.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dmtlab.data import PairedDataset
from dmtlab.diffusion import diffuse_pair, diffuse_pair_asym
from dmtlab.errors import ContractError, SelectionError, ValidationError
from dmtlab.metrics import batch_metric, ssim_batch
from dmtlab.rng import make_rng
from dmtlab.schedule import NoiseSchedule
from dmtlab.workers import parallel_map

logger = logging.getLogger(__name__)

CURVE_METRICS = ("ssim", "psnr", "l1", "l2")
EQUALITY_TOLERANCE = 1e-12


@dataclass
class DistanceCurve:
    metric: str
    timesteps: list[int]
    d_source: np.ndarray
    d_cross: np.ndarray
    n_samples: int
    seed: int

    def __post_init__(self):
        self.d_source = np.asarray(self.d_source, dtype=np.float64)
        self.d_cross = np.asarray(self.d_cross, dtype=np.float64)
        if not (len(self.timesteps) == self.d_source.size == self.d_cross.size):
            raise ValidationError("Curve arrays must have one value per timestep")
        if not (np.all(np.isfinite(self.d_source)) and np.all(np.isfinite(self.d_cross))):
            raise ValidationError("Curve values must be finite")


@dataclass
class GridSearchResult:
    lam: float
    s_grid: list[int]
    t_grid: list[int]
    cells: list[tuple[int, int, float]] = field(default_factory=list)
    s_star: int = 0
    t_star: int = 0

    @property
    def argmin(self) -> tuple[int, int]:
        return self.s_star, self.t_star

    def diagonal_offset(self) -> int:
        """Grid steps between s* and t* (positions in the sorted grids)."""
        return abs(sorted(self.s_grid).index(self.s_star) - sorted(self.t_grid).index(self.t_star))


def _check_metric(metric: str) -> str:
    metric = metric.lower()
    if metric not in CURVE_METRICS:
        raise ValidationError(f"Unknown curve metric {metric!r}; choose from {CURVE_METRICS}")
    return metric


def _distance(metric: str, a: np.ndarray, b: np.ndarray) -> float:
    values = batch_metric(metric, a, b)
    if metric == "ssim":
        values = 1.0 - values
    return float(values.mean())


def _sample(pairs: PairedDataset, n_samples: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pairs cycled in index order with one noise draw per sample."""
    if pairs.n == 0:
        raise ContractError("Cannot compute distances on an empty dataset")
    if n_samples < 1:
        raise ContractError(f"n_samples must be at least 1, got {n_samples}")
    idx = np.arange(n_samples) % pairs.n
    x0, y0 = pairs.x0[idx], pairs.y0[idx]
    return x0, y0, make_rng(seed).standard_normal(x0.shape)


def default_timesteps(T: int, stride: int | None = None) -> list[int]:
    stride = stride or max(1, T // 40)
    steps = list(range(0, T + 1, stride))
    return steps if steps[-1] == T else steps + [T]


def band_timesteps(T: int, center: int, radius: int = 1, step: int | None = None) -> list[int]:
    """Steps ``center ± k·step`` for k ≤ ``radius``, clipped to [0, T].

    The default step is a quarter of ``center``.
    """
    if not 0 <= center <= T:
        raise ValidationError(f"center must lie in [0, {T}], got {center}")
    if radius < 0:
        raise ValidationError(f"radius must be non-negative, got {radius}")
    step = step or max(1, center // 4)
    return sorted({min(T, max(0, center + k * step)) for k in range(-radius, radius + 1)})


def compute_curves(
    pairs: PairedDataset,
    sched: NoiseSchedule,
    metric: str = "ssim",
    timesteps: list[int] | None = None,
    n_samples: int = 256,
    seed: int = 0,
    threads: int = 1,
) -> DistanceCurve:
    """Mean d(x0, x_t) and d(x_t, y_t) per timestep under shared-noise diffusion.

    The same noise draws are reused at every timestep.
    """
    metric = _check_metric(metric)
    timesteps = default_timesteps(sched.T) if timesteps is None else [int(t) for t in timesteps]
    if not timesteps or timesteps != sorted(timesteps) or timesteps[0] < 0 or timesteps[-1] > sched.T:
        raise ContractError(f"timesteps must be sorted ascending within [0, {sched.T}]")
    x0, y0, z = _sample(pairs, n_samples, seed)

    def at(t: int) -> tuple[float, float]:
        d = diffuse_pair(x0, y0, t, z, sched)
        return _distance(metric, x0, d.x_t), _distance(metric, d.x_t, d.y_t)

    values = parallel_map(at, timesteps, threads)
    curve = DistanceCurve(
        metric=metric,
        timesteps=timesteps,
        d_source=[v[0] for v in values],
        d_cross=[v[1] for v in values],
        n_samples=n_samples,
        seed=seed,
    )
    logger.info("computed %s curves over %d timesteps (%d samples)", metric, len(timesteps), n_samples)
    return curve


def select_t_star(curve: DistanceCurve) -> int:
    """Sampled timestep nearest the first crossing of the two curves."""
    ts = np.asarray(curve.timesteps, dtype=np.float64)
    diff = curve.d_source - curve.d_cross
    sign = np.sign(diff)
    start = int(np.argmax(sign != 0)) if np.any(sign != 0) else len(sign)
    for k in range(start + 1, len(sign)):
        if sign[k] == 0:
            return int(curve.timesteps[k])
        if sign[k] != sign[start]:
            frac = diff[k - 1] / (diff[k - 1] - diff[k])
            crossing = ts[k - 1] + frac * (ts[k] - ts[k - 1])
            nearest = k - 1 if crossing - ts[k - 1] <= ts[k] - crossing else k
            t_star = int(curve.timesteps[nearest])
            logger.info("curves cross at t=%.2f, selected t*=%d", crossing, t_star)
            return t_star
    raise SelectionError(
        f"The {curve.metric} curves do not cross within t in "
        f"[{curve.timesteps[0]}, {curve.timesteps[-1]}]; widen the timestep range"
    )


def dist_st_value(x0, y0, s: int, t: int, lam: float, z, sched: NoiseSchedule) -> np.ndarray:
    """Per-sample pair-selection objective for batches [n, ...]."""
    x_s, y_t = diffuse_pair_asym(x0, y0, s, t, z, sched)
    a = ssim_batch(x0, x_s)
    b = ssim_batch(x_s, y_t)
    c = ssim_batch(y0, y_t)
    return np.abs(a - b) + np.abs(b - c) + np.abs(a - c) + lam * (a + b + c)


def dist_st(
    pairs: PairedDataset,
    sched: NoiseSchedule,
    s: int,
    t: int,
    lam: float = 0.5,
    n_samples: int = 256,
    seed: int = 0,
) -> float:
    """Monte Carlo mean of the (s, t) selection objective."""
    if lam < 0:
        raise ValidationError(f"lambda must be non-negative, got {lam}")
    sched.check_t(s)
    sched.check_t(t)
    x0, y0, z = _sample(pairs, n_samples, seed)
    return float(dist_st_value(x0, y0, s, t, lam, z, sched).mean())


def grid_search_st(
    pairs: PairedDataset,
    sched: NoiseSchedule,
    s_grid: list[int],
    t_grid: list[int],
    lam: float = 0.5,
    n_samples: int = 256,
    seed: int = 0,
    threads: int = 1,
) -> GridSearchResult:
    """Evaluate ``dist_st`` on every (s, t); argmin ties go to the smallest s, then t."""
    if not s_grid or not t_grid:
        raise ContractError("s_grid and t_grid must be non-empty")
    cells = [(int(s), int(t)) for s in s_grid for t in t_grid]
    values = parallel_map(lambda st: dist_st(pairs, sched, st[0], st[1], lam, n_samples, seed), cells, threads)
    rows = [(s, t, v) for (s, t), v in zip(cells, values)]
    s_star, t_star, best = min(rows, key=lambda r: (r[2], r[0], r[1]))
    logger.info("grid search over %d cells: argmin (s, t)=(%d, %d), dist=%.6f", len(rows), s_star, t_star, best)
    return GridSearchResult(lam=lam, s_grid=list(s_grid), t_grid=list(t_grid), cells=rows, s_star=s_star, t_star=t_star)


def max_triplet_bound(d1: float, d2: float, d3: float) -> tuple[float, float, bool]:
    """(max, arithmetic mean, all three equal)."""
    equal = abs(d1 - d2) < EQUALITY_TOLERANCE and abs(d2 - d3) < EQUALITY_TOLERANCE and abs(d1 - d3) < EQUALITY_TOLERANCE
    return max(d1, d2, d3), (d1 + d2 + d3) / 3.0, equal


def write_curves_csv(path, curve: DistanceCurve) -> None:
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["t", "d_source", "d_cross"])
        for t, a, b in zip(curve.timesteps, curve.d_source, curve.d_cross):
            writer.writerow([t, repr(float(a)), repr(float(b))])


def write_grid_csv(path, result: GridSearchResult) -> None:
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["s", "t", "dist"])
        for s, t, v in result.cells:
            writer.writerow([s, t, repr(float(v))])
