"""Similarity metrics and the Fréchet distance between Gaussian feature statistics.

"toy-FID" is the Fréchet distance between statistics of deterministic toy
features (flattened pixels or 4x4 average pools), not Inception features.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.ndimage

from dmtlab.errors import ContractError, DimensionError, NumericError, ValidationError
from dmtlab.tensor import Tensor

logger = logging.getLogger(__name__)

PSNR_CAP = 99.0
FEATURIZERS = ("flatten", "avgpool4")
EIGEN_TOLERANCE = 1e-10


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _pair(a, b, what: str) -> tuple[np.ndarray, np.ndarray]:
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} differ")
    return a, b


def _ssim_map(mu_a, mu_b, var_a, var_b, cov_ab, c1, c2):
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov_ab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, window: int = 7, k1: float = 0.01, k2: float = 0.03, dynamic_range: float = 2.0) -> float:
    """Mean SSIM over all valid ``window`` x ``window`` uniform windows.

    Accepts [h, w] or [c, h, w] images (channels averaged). 1-D vectors use
    global moments instead of windows.
    """
    a, b = _pair(a, b, "ssim")
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    if a.ndim == 1:
        mu_a, mu_b = a.mean(), b.mean()
        var_a = ((a - mu_a) ** 2).mean()
        var_b = ((b - mu_b) ** 2).mean()
        cov = ((a - mu_a) * (b - mu_b)).mean()
        return float(_ssim_map(mu_a, mu_b, var_a, var_b, cov, c1, c2))
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise DimensionError(f"ssim expects [h, w] or [c, h, w], got {a.shape}")
    h, w = a.shape[1:]
    if window % 2 == 0 or window > min(h, w):
        raise ValidationError(f"ssim window must be odd and at most {min(h, w)}, got {window}")
    r = window // 2
    size = (1, window, window)

    def local_mean(x):
        return scipy.ndimage.uniform_filter(x, size=size, mode="constant")[:, r : h - r, r : w - r]

    mu_a, mu_b = local_mean(a), local_mean(b)
    var_a = local_mean(a * a) - mu_a * mu_a
    var_b = local_mean(b * b) - mu_b * mu_b
    cov = local_mean(a * b) - mu_a * mu_b
    return float(_ssim_map(mu_a, mu_b, var_a, var_b, cov, c1, c2).mean())


def psnr(a, b, dynamic_range: float = 2.0) -> float:
    a, b = _pair(a, b, "psnr")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-12:
        return PSNR_CAP
    return min(10.0 * math.log10(dynamic_range**2 / mse), PSNR_CAP)


def l1(a, b) -> float:
    a, b = _pair(a, b, "l1")
    return float(np.mean(np.abs(a - b)))


def l2(a, b) -> float:
    """Root-mean-square difference."""
    a, b = _pair(a, b, "l2")
    return float(np.sqrt(np.mean((a - b) ** 2)))


METRICS = {"ssim": ssim, "psnr": psnr, "l1": l1, "l2": l2}


def ssim_batch(a, b, window: int = 7, k1: float = 0.01, k2: float = 0.03, dynamic_range: float = 2.0) -> np.ndarray:
    """Per-sample ``ssim`` for batches [n, d] or [n, c, h, w]."""
    a, b = _pair(a, b, "ssim")
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    if a.ndim == 2:
        mu_a = a.mean(axis=1, keepdims=True)
        mu_b = b.mean(axis=1, keepdims=True)
        var_a = ((a - mu_a) ** 2).mean(axis=1)
        var_b = ((b - mu_b) ** 2).mean(axis=1)
        cov = ((a - mu_a) * (b - mu_b)).mean(axis=1)
        return _ssim_map(mu_a[:, 0], mu_b[:, 0], var_a, var_b, cov, c1, c2)
    if a.ndim != 4:
        raise DimensionError(f"ssim_batch expects [n, d] or [n, c, h, w], got {a.shape}")
    h, w = a.shape[2:]
    if window % 2 == 0 or window > min(h, w):
        raise ValidationError(f"ssim window must be odd and at most {min(h, w)}, got {window}")
    r = window // 2
    size = (1, 1, window, window)

    def local_mean(x):
        return scipy.ndimage.uniform_filter(x, size=size, mode="constant")[:, :, r : h - r, r : w - r]

    mu_a, mu_b = local_mean(a), local_mean(b)
    var_a = local_mean(a * a) - mu_a * mu_a
    var_b = local_mean(b * b) - mu_b * mu_b
    cov = local_mean(a * b) - mu_a * mu_b
    return _ssim_map(mu_a, mu_b, var_a, var_b, cov, c1, c2).mean(axis=(1, 2, 3))


def batch_metric(name: str, a, b) -> np.ndarray:
    """Per-sample metric values for batches [n, ...]."""
    if name == "ssim":
        return ssim_batch(a, b)
    try:
        fn = METRICS[name]
    except KeyError:
        raise ValidationError(f"Unknown metric {name!r}; choose from {sorted(METRICS)}") from None
    a, b = _pair(a, b, name)
    return np.array([fn(x, y) for x, y in zip(a, b)])


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def featurize(samples, featurizer: str = "flatten") -> np.ndarray:
    x = np.asarray([_arr(s) for s in samples]) if isinstance(samples, list) else _arr(samples)
    n = x.shape[0]
    if featurizer == "flatten":
        return x.reshape(n, -1)
    if featurizer == "avgpool4":
        if x.ndim != 4 or x.shape[2] % 4 or x.shape[3] % 4:
            raise DimensionError(f"avgpool4 needs [n, c, h, w] with h, w divisible by 4, got {x.shape}")
        _, c, h, w = x.shape
        return x.reshape(n, c, h // 4, 4, w // 4, 4).mean(axis=(3, 5)).reshape(n, -1)
    raise ValidationError(f"Unknown featurizer {featurizer!r}; choose from {FEATURIZERS}")


def feature_stats(samples, featurizer: str = "flatten") -> FeatureStats:
    """Unbiased mean and covariance of featurized samples."""
    feats = featurize(samples, featurizer)
    if feats.shape[0] < 2:
        raise ContractError(f"feature_stats needs at least 2 samples, got {feats.shape[0]}")
    cov = np.atleast_2d(np.cov(feats, rowvar=False, ddof=1))
    return FeatureStats(mean=feats.mean(axis=0), cov=(cov + cov.T) / 2.0, n=feats.shape[0])


def _clamped_eigvalsh(m: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    w, v = scipy.linalg.eigh(m)
    tol = EIGEN_TOLERANCE * max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.size and w.min() < -tol:
        raise NumericError(f"{what} is not positive semidefinite (min eigenvalue {w.min():.3e})")
    return np.clip(w, 0.0, None), v


def frechet_distance(p: FeatureStats, q: FeatureStats) -> float:
    """||μ1 − μ2||² + Tr(Σ1 + Σ2 − 2(Σ1 Σ2)^{1/2}), clamped at 0."""
    if p.mean.shape != q.mean.shape or p.cov.shape != q.cov.shape:
        raise DimensionError(f"Feature dims differ: {p.mean.shape} vs {q.mean.shape}")
    w1, v1 = _clamped_eigvalsh(p.cov, "first covariance")
    root1 = (v1 * np.sqrt(w1)) @ v1.T
    middle = root1 @ q.cov @ root1
    w_mid, _ = _clamped_eigvalsh((middle + middle.T) / 2.0, "covariance product")
    _clamped_eigvalsh(q.cov, "second covariance")
    diff = p.mean - q.mean
    fd = float(diff @ diff + np.trace(p.cov) + np.trace(q.cov) - 2.0 * np.sqrt(w_mid).sum())
    return max(fd, 0.0)


def toy_fid(a, b, featurizer: str | None = None) -> float:
    """Fréchet distance between toy-feature statistics of two sample sets."""
    a, b = _arr(a), _arr(b)
    if featurizer is None:
        featurizer = "avgpool4" if a.ndim == 4 and a.shape[2] % 4 == 0 and a.shape[3] % 4 == 0 else "flatten"
    return frechet_distance(feature_stats(a, featurizer), feature_stats(b, featurizer))


EVAL_METRICS = ("ssim", "psnr", "l1", "l2", "toyfid")
METRIC_LABELS = {"toyfid": "toy-FID"}


def parse_metric_list(text: str) -> list[str]:
    names = [name.strip().lower() for name in text.split(",") if name.strip()]
    unknown = [name for name in names if name not in EVAL_METRICS]
    if not names or unknown:
        raise ValidationError(f"Unknown metrics {unknown or text!r}; choose from {EVAL_METRICS}")
    return names


def evaluate_all(pred, target, names) -> list[tuple[str, float]]:
    """(label, value) rows in the order of ``names``; per-sample metrics are averaged."""
    pred, target = _pair(pred, target, "evaluate")
    rows = []
    for name in names:
        if name == "toyfid":
            value = toy_fid(pred, target)
        elif name in METRICS:
            value = float(batch_metric(name, pred, target).mean())
        else:
            raise ValidationError(f"Unknown metric {name!r}; choose from {EVAL_METRICS}")
        rows.append((METRIC_LABELS.get(name, name), value))
    return rows
