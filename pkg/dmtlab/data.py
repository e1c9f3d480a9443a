"""Synthetic paired domains and dataset files.

Each generator returns aligned (x0, y0) pairs in [-1, 1]:

* ``moons``: two-moons points (source) and the same points rotated (target).
* ``shapes``: rectangle/ellipse outlines (source) and filled shapes (target).
* ``gray2color``: luminance images (source) and colored patterns (target).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.ndimage

from dmtlab.errors import ContractError, DegenerateDomainError, DimensionError, ValidationError
from dmtlab.rng import make_rng
from dmtlab.storage import check_version, read_container, split_payload, write_container, write_pnm, FORMAT_VERSION

logger = logging.getLogger(__name__)

DATASET_MAGIC = b"DMTDATA1"
MODES = ("vector2d", "vector", "image")
SPLITS = ("train", "test")
LUMA = np.array([0.299, 0.587, 0.114])
FILL_LEVELS = {"rectangle": 0.6, "ellipse": 0.2}


def ensure_not_degenerate(x0: np.ndarray, y0: np.ndarray) -> None:
    if np.array_equal(x0, y0):
        raise DegenerateDomainError(
            "Source and target domains are elementwise identical: the translation "
            "likelihood is a Dirac distribution and the translator cannot be optimized"
        )


@dataclass
class PairedDataset:
    mode: str
    x0: np.ndarray
    y0: np.ndarray
    split: list[str]
    generator: str
    seed: int
    params: dict = field(default_factory=dict)
    bounded: bool = True

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=np.float64)
        self.y0 = np.asarray(self.y0, dtype=np.float64)
        self.split = list(self.split)
        if self.mode not in MODES:
            raise ValidationError(f"Unknown dataset mode {self.mode!r}")
        if self.x0.shape != self.y0.shape:
            raise DimensionError(f"Source {self.x0.shape} and target {self.y0.shape} are not aligned")
        if self.x0.shape[0] == 0:
            raise ContractError("A paired dataset needs at least one pair")
        ndim = {"vector2d": 2, "vector": 2, "image": 4}[self.mode]
        if self.x0.ndim != ndim or (self.mode == "vector2d" and self.x0.shape[1] != 2):
            raise DimensionError(f"Arrays of shape {self.x0.shape} do not fit mode {self.mode}")
        if len(self.split) != self.n or any(tag not in SPLITS for tag in self.split):
            raise ValidationError(f"Need one train/test tag per pair ({self.n})")
        if self.bounded and (np.abs(self.x0).max() > 1.0 or np.abs(self.y0).max() > 1.0):
            raise ValidationError("Dataset values must lie in [-1, 1]")
        ensure_not_degenerate(self.x0, self.y0)

    @property
    def n(self) -> int:
        return self.x0.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.x0.shape[1:]

    def __len__(self) -> int:
        return self.n

    def indices(self, tag: str) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.split) if s == tag], dtype=np.int64)

    def subset(self, tag: str) -> PairedDataset:
        idx = self.indices(tag)
        if idx.size == 0:
            raise ContractError(f"Dataset has no {tag} pairs")
        return PairedDataset(
            mode=self.mode,
            x0=self.x0[idx],
            y0=self.y0[idx],
            split=[tag] * idx.size,
            generator=self.generator,
            seed=self.seed,
            params=dict(self.params),
            bounded=self.bounded,
        )

    def train(self) -> PairedDataset:
        return self.subset("train")

    def test(self) -> PairedDataset:
        return self.subset("test")

    def header(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "mode": self.mode,
            "n": self.n,
            "shape": list(self.shape),
            "generator": self.generator,
            "seed": self.seed,
            "split": self.split,
            "params": self.params,
            "bounded": self.bounded,
        }


def split_tags(n: int, test_fraction: float) -> list[str]:
    if not 0.0 <= test_fraction < 1.0:
        raise ValidationError(f"test_fraction must lie in [0, 1), got {test_fraction}")
    n_test = int(round(n * test_fraction))
    return ["train"] * (n - n_test) + ["test"] * n_test


def _check_n(n: int) -> None:
    if n < 2:
        raise ContractError(f"Need at least 2 pairs, got {n}")


# --- two moons ---


def _rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    c = 0.0 if abs(c) < 1e-15 else c
    s = 0.0 if abs(s) < 1e-15 else s
    return np.array([[c, -s], [s, c]])


def gen_moons_pair(n: int, rotation: float, noise_sd: float = 0.05, seed: int = 0, test_fraction: float = 0.2) -> PairedDataset:
    """Two moons scaled into the unit disk, paired with their rotation about the origin."""
    _check_n(n)
    if noise_sd < 0:
        raise ValidationError(f"noise_sd must be non-negative, got {noise_sd}")
    rng = make_rng(seed)
    upper = n // 2
    theta = rng.uniform(0.0, math.pi, size=n)
    pts = np.empty((n, 2))
    pts[:upper, 0] = np.cos(theta[:upper])
    pts[:upper, 1] = np.sin(theta[:upper])
    pts[upper:, 0] = 1.0 - np.cos(theta[upper:])
    pts[upper:, 1] = 0.5 - np.sin(theta[upper:])
    pts = (pts - np.array([0.5, 0.25])) * 0.55 + rng.normal(0.0, noise_sd, size=(n, 2))
    radius = np.linalg.norm(pts, axis=1, keepdims=True)
    pts = np.where(radius > 1.0, pts / np.maximum(radius, 1e-300), pts)
    x0 = np.clip(pts, -1.0, 1.0)
    y0 = np.clip(x0 @ _rotation(rotation).T, -1.0, 1.0)
    return PairedDataset(
        mode="vector2d",
        x0=x0,
        y0=y0,
        split=split_tags(n, test_fraction),
        generator="moons",
        seed=seed,
        params={"rotation": rotation, "noise_sd": noise_sd},
    )


def moons_manifold(n_points: int = 2000, rotation: float = 0.0) -> np.ndarray:
    """Noise-free points along both moons in dataset coordinates.

    ``rotation`` gives the target side of ``gen_moons_pair``.
    """
    theta = np.linspace(0.0, math.pi, n_points)
    upper = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    lower = np.stack([1.0 - np.cos(theta), 0.5 - np.sin(theta)], axis=1)
    pts = (np.concatenate([upper, lower]) - np.array([0.5, 0.25])) * 0.55
    return pts @ _rotation(rotation).T


# --- shapes ---


def _shape_mask(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    if kind == "rectangle":
        top, left = rng.integers(1, size // 2, size=2)
        height = rng.integers(3, size - 1 - top)
        width = rng.integers(3, size - 1 - left)
        return (yy >= top) & (yy < top + height) & (xx >= left) & (xx < left + width)
    cy, cx = rng.uniform(size * 0.35, size * 0.65, size=2)
    ry = rng.uniform(2.0, min(cy, size - 1 - cy))
    rx = rng.uniform(2.0, min(cx, size - 1 - cx))
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def gen_shapes_pair(n: int, size: int = 12, seed: int = 0, test_fraction: float = 0.2) -> PairedDataset:
    """Outline (source) and filled (target) rectangles and ellipses."""
    _check_n(n)
    if size < 8:
        raise ValidationError(f"size must be at least 8, got {size}")
    rng = make_rng(seed)
    x0 = np.full((n, 1, size, size), -1.0)
    y0 = np.full((n, 1, size, size), -1.0)
    kinds = []
    for i in range(n):
        kind = "rectangle" if rng.random() < 0.5 else "ellipse"
        mask = _shape_mask(kind, size, rng)
        outline = mask & ~scipy.ndimage.binary_erosion(mask)
        x0[i, 0][outline] = 1.0
        y0[i, 0][mask] = FILL_LEVELS[kind]
        kinds.append(kind)
    return PairedDataset(
        mode="image",
        x0=x0,
        y0=y0,
        split=split_tags(n, test_fraction),
        generator="shapes",
        seed=seed,
        params={"size": size, "kinds": kinds},
    )


# --- gray to color ---


def luminance(img: np.ndarray) -> np.ndarray:
    """[..., 3, h, w] -> [..., h, w] Rec. 601 luma."""
    return np.tensordot(LUMA, img, axes=([0], [-3]))


def gen_gray2color_pair(
    n: int,
    size: int = 12,
    seed: int = 0,
    saturation: float = 1.0,
    test_fraction: float = 0.2,
) -> PairedDataset:
    """Colored gradient-and-disc patterns (target) and their luminance (source)."""
    _check_n(n)
    if size < 8:
        raise ValidationError(f"size must be at least 8, got {size}")
    if not 0.0 <= saturation <= 1.0:
        raise ValidationError(f"saturation must lie in [0, 1], got {saturation}")
    rng = make_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    y0 = np.empty((n, 3, size, size))
    for i in range(n):
        colors = rng.uniform(-1.0, 1.0, size=(3, 3))
        gray = colors @ LUMA
        colors = gray[:, None] + saturation * (colors - gray[:, None])
        angle = rng.uniform(0.0, 2.0 * math.pi)
        u = xx * math.cos(angle) + yy * math.sin(angle)
        u = (u - u.min()) / (u.max() - u.min())
        img = colors[0][:, None, None] * (1.0 - u) + colors[1][:, None, None] * u
        cy, cx = rng.uniform(0.25, 0.75, size=2)
        radius = rng.uniform(0.15, 0.3)
        disc = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
        img[:, disc] = colors[2][:, None]
        y0[i] = img
    y0 = np.clip(y0, -1.0, 1.0)
    if np.array_equal(y0[:, 0], y0[:, 1]) and np.array_equal(y0[:, 1], y0[:, 2]):
        raise DegenerateDomainError(
            "Target images are already grayscale: source and target describe the same domain"
        )
    lum = np.clip(luminance(y0), -1.0, 1.0)
    x0 = np.repeat(lum[:, None], 3, axis=1)
    return PairedDataset(
        mode="image",
        x0=x0,
        y0=y0,
        split=split_tags(n, test_fraction),
        generator="gray2color",
        seed=seed,
        params={"size": size, "saturation": saturation},
    )


GENERATORS = {
    "moons": gen_moons_pair,
    "shapes": gen_shapes_pair,
    "gray2color": gen_gray2color_pair,
}


def generate(name: str, n: int, seed: int, **params) -> PairedDataset:
    try:
        fn = GENERATORS[name]
    except KeyError:
        raise ValidationError(f"Unknown generator {name!r}; choose from {sorted(GENERATORS)}") from None
    return fn(n=n, seed=seed, **params)


# --- persistence ---


def save_dataset(ds: PairedDataset, path) -> None:
    write_container(path, DATASET_MAGIC, ds.header(), [ds.x0, ds.y0])
    logger.info("saved %s dataset (%d pairs) to %s", ds.generator, ds.n, path)


def load_dataset(path) -> PairedDataset:
    header, payload, offset = read_container(path, DATASET_MAGIC)
    check_version(header, f"Dataset {path}")
    try:
        shape = (int(header["n"]),) + tuple(int(d) for d in header["shape"])
        mode, generator, seed, split = header["mode"], header["generator"], header["seed"], header["split"]
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError(f"Dataset {path} header is incomplete: {e}") from None
    x0, y0 = split_payload(payload, [shape, shape], offset)
    return PairedDataset(
        mode=mode,
        x0=x0,
        y0=y0,
        split=split,
        generator=generator,
        seed=seed,
        params=header.get("params", {}),
        bounded=header.get("bounded", True),
    )


def export_images(ds: PairedDataset, out_dir, limit: int | None = None, prefix: str = "") -> list[Path]:
    """Write source/target pairs as PGM (1 channel) or PPM (3 channels)."""
    if ds.mode != "image":
        raise ValidationError("Only image datasets can be exported as PGM/PPM")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = "pgm" if ds.shape[0] == 1 else "ppm"
    written = []
    for i in range(ds.n if limit is None else min(limit, ds.n)):
        for tag, arr in (("x", ds.x0), ("y", ds.y0)):
            path = out_dir / f"{prefix}{i:04d}_{tag}.{ext}"
            write_pnm(path, arr[i])
            written.append(path)
    return written
